use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Zero-padded spectrum of `x` at length `nfft`.
pub(crate) fn spectrum(x: &[f64], nfft: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(nfft, Complex::new(0.0, 0.0));
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(nfft).process(&mut buf));
    buf
}

/// `r[c + max_lag] = sum_k x[k] * y[k + c]` for `c` in `[-max_lag, max_lag]`,
/// from precomputed spectra of the zero-padded inputs.
pub(crate) fn cross_correlation_from_spectra(
    fx: &[Complex<f64>],
    fy: &[Complex<f64>],
    max_lag: usize,
) -> Vec<f64> {
    let nfft = fx.len();
    let mut prod: Vec<Complex<f64>> = fx.iter().zip(fy).map(|(a, b)| a.conj() * b).collect();
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(nfft).process(&mut prod));
    let scale = 1.0 / nfft as f64;
    (0..=2 * max_lag)
        .map(|i| {
            let c = i as i64 - max_lag as i64;
            let idx = c.rem_euclid(nfft as i64) as usize;
            prod[idx].re * scale
        })
        .collect()
}

/// FFT size that avoids circular wrap for lags up to `max_lag`.
pub(crate) fn fft_len(n: usize, max_lag: usize) -> usize {
    (n + max_lag + 1).next_power_of_two()
}

pub(crate) fn cross_correlation(x: &[f64], y: &[f64], max_lag: usize) -> Vec<f64> {
    let nfft = fft_len(x.len().max(y.len()), max_lag);
    cross_correlation_from_spectra(&spectrum(x, nfft), &spectrum(y, nfft), max_lag)
}
