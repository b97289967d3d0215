//! All-lag normalized cross-correlation and CCA scoring of window pairs.
//!
//! Lags follow one convention throughout: a lag `c` pairs `x[k]` with
//! `y[k + c]`, so a positive lag means the same content appears later in
//! `y` (sensor 2).

pub(crate) mod fft;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::{extract_window_pair, WindowGrid, WindowPair};
use crate::signal::Signal;

pub(crate) use fft::cross_correlation;

/// Scores of every lag in `[-max_lag, max_lag]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LagScan {
    pub max_lag: usize,
    pub scores: Vec<f64>,
    /// Set when a block has no variance; all scores are then zero.
    pub degenerate: bool,
}

impl LagScan {
    fn degenerate(max_lag: usize) -> Self {
        Self { max_lag, scores: vec![0.0; 2 * max_lag + 1], degenerate: true }
    }

    pub fn lag_at(&self, index: usize) -> i64 {
        index as i64 - self.max_lag as i64
    }

    pub fn score_at(&self, lag: i64) -> Option<f64> {
        let idx = lag + self.max_lag as i64;
        (idx >= 0).then(|| self.scores.get(idx as usize).copied()).flatten()
    }

    /// Lag with the highest score; ties go to the smallest |lag|.
    pub fn argmax(&self) -> (i64, f64) {
        let mut best = (0i64, f64::NEG_INFINITY);
        for (i, &s) in self.scores.iter().enumerate() {
            let lag = self.lag_at(i);
            if s > best.1 || (s == best.1 && lag.abs() < best.0.abs()) {
                best = (lag, s);
            }
        }
        best
    }

    /// Parabolic refinement of the peak; returns a fractional lag.
    pub fn refined_argmax(&self) -> f64 {
        let (lag, _) = self.argmax();
        let i = (lag + self.max_lag as i64) as usize;
        if i == 0 || i + 1 >= self.scores.len() {
            return lag as f64;
        }
        let (a, b, c) = (self.scores[i - 1], self.scores[i], self.scores[i + 1]);
        let denom = a - 2.0 * b + c;
        if denom >= 0.0 {
            return lag as f64;
        }
        lag as f64 + (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    }
}

fn centered(x: ArrayView1<'_, f64>) -> Vec<f64> {
    let mean = x.sum() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

fn prefix_products(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
        out.push(acc);
    }
    out
}

/// Overlapping index ranges of `x` and `y` at lag `c` for length `n`.
fn overlap(n: usize, c: i64) -> ((usize, usize), (usize, usize)) {
    let n = n as i64;
    if c >= 0 {
        ((0, (n - c) as usize), (c as usize, n as usize))
    } else {
        ((-c as usize, n as usize), (0, (n + c) as usize))
    }
}

/// Normalized cross-correlation of two equal-length univariate windows at
/// every lag up to `max_lag`.
///
/// Both windows are mean-centered; each lag is normalized by the norms of
/// the overlapping slices.
pub fn ncc_all_lags(x: &[f64], y: &[f64], max_lag: usize) -> Result<LagScan> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "windows must have equal length, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n == 0 || max_lag >= n {
        return Err(Error::invalid(format!("max lag {max_lag} needs more than {n} samples")));
    }
    let xc = centered(ArrayView1::from(x));
    let yc = centered(ArrayView1::from(y));
    let ex = prefix_products(&xc, &xc);
    let ey = prefix_products(&yc, &yc);
    if ex[n] <= 0.0 || ey[n] <= 0.0 {
        return Ok(LagScan::degenerate(max_lag));
    }
    let raw = cross_correlation(&xc, &yc, max_lag);
    let floor = 1e-24 * ex[n] * ey[n];
    let scores = raw
        .iter()
        .enumerate()
        .map(|(i, num)| {
            let c = i as i64 - max_lag as i64;
            let ((x0, x1), (y0, y1)) = overlap(n, c);
            let denom = (ex[x1] - ex[x0]) * (ey[y1] - ey[y0]);
            if denom <= floor {
                0.0
            } else {
                num / denom.sqrt()
            }
        })
        .collect();
    Ok(LagScan { max_lag, scores, degenerate: false })
}

/// Tikhonov regularization added to the auto-covariance blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Ridge {
    /// Fixed value added to the diagonal.
    Absolute(f64),
    /// `factor * trace(Sigma) / l`, recomputed per block.
    Relative(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-4)
    }
}

impl Ridge {
    pub fn value_for(&self, sigma: &DMatrix<f64>) -> f64 {
        match *self {
            Ridge::Absolute(r) => r,
            Ridge::Relative(f) => f * sigma.trace() / sigma.nrows() as f64,
        }
    }
}

/// Cholesky factors and SVD of the whitened cross-covariance, kept for
/// gradient computations.
pub(crate) struct Whitened {
    pub l1: DMatrix<f64>,
    pub l2: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v_t: DMatrix<f64>,
    pub singular: Vec<f64>,
}

fn cholesky_lower(m: &DMatrix<f64>, which: &str) -> Result<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.l()).ok_or_else(|| {
        Error::Numerical(format!(
            "Cholesky factorization of {which} failed; increase the ridge"
        ))
    })
}

/// `L1^{-1} S12 L2^{-T}` with `Lk Lk^T = Skk + ridge I`, and its SVD.
pub(crate) fn whiten(
    s11: &DMatrix<f64>,
    s12: &DMatrix<f64>,
    s22: &DMatrix<f64>,
    ridge: Ridge,
) -> Result<Whitened> {
    let ridge1 = ridge.value_for(s11);
    let ridge2 = ridge.value_for(s22);
    if ridge1 < 0.0 || ridge2 < 0.0 {
        return Err(Error::invalid("ridge must be >= 0"));
    }
    let a11 = s11 + DMatrix::identity(s11.nrows(), s11.nrows()) * ridge1;
    let a22 = s22 + DMatrix::identity(s22.nrows(), s22.nrows()) * ridge2;
    let l1 = cholesky_lower(&a11, "Sigma_11")?;
    let l2 = cholesky_lower(&a22, "Sigma_22")?;
    let left = l1
        .solve_lower_triangular(s12)
        .ok_or_else(|| Error::Numerical("triangular solve failed for Sigma_11".into()))?;
    let t = l2
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed for Sigma_22".into()))?
        .transpose();
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("whitened cross-covariance is not finite".into()));
    }
    let svd = t.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let singular = svd.singular_values.iter().copied().collect();
    Ok(Whitened { l1, l2, u, v_t, singular })
}

/// Sum of canonical correlations from covariance blocks.
///
/// With `signed` and univariate blocks the sign of the correlation is kept,
/// so anti-correlated lags score below zero.
pub fn canonical_correlation(
    s11: &DMatrix<f64>,
    s12: &DMatrix<f64>,
    s22: &DMatrix<f64>,
    ridge: Ridge,
    signed: bool,
) -> Result<f64> {
    if signed && s12.nrows() == 1 && s12.ncols() == 1 {
        let r1 = ridge.value_for(s11);
        let r2 = ridge.value_for(s22);
        let denom = ((s11[(0, 0)] + r1) * (s22[(0, 0)] + r2)).sqrt();
        if !(denom > 0.0) {
            return Err(Error::Numerical(
                "zero variance in univariate correlation; increase the ridge".into(),
            ));
        }
        return Ok(s12[(0, 0)] / denom);
    }
    Ok(whiten(s11, s12, s22, ridge)?.singular.iter().sum())
}

fn gram(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> DMatrix<f64> {
    let g = a.dot(&b.t());
    DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[[i, j]])
}

/// Nuclear norm of `S11^{-1/2} S12 S22^{-1/2}` for mean-centered blocks,
/// with `S_mn = X_m X_n^T` and `ridge` added to the diagonals of `S11`, `S22`.
pub fn cca_score(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, ridge: f64) -> Result<f64> {
    if x.ncols() != y.ncols() {
        return Err(Error::invalid(format!(
            "blocks must have equal length, got {} and {}",
            x.ncols(),
            y.ncols()
        )));
    }
    if ridge < 0.0 {
        return Err(Error::invalid("ridge must be >= 0"));
    }
    let s11 = gram(x, x);
    let s12 = gram(x, y);
    let s22 = gram(y, y);
    canonical_correlation(&s11, &s12, &s22, Ridge::Absolute(ridge), false)
}

/// Covariance blocks of centered `x`, `y` restricted to their overlap at lag `c`.
pub(crate) fn lag_covariances(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    c: i64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let ((x0, x1), (y0, y1)) = overlap(x.ncols(), c);
    let xs = x.slice(ndarray::s![.., x0..x1]);
    let ys = y.slice(ndarray::s![.., y0..y1]);
    (gram(xs, xs), gram(xs, ys), gram(ys, ys))
}

/// Center every row of a block.
pub fn center_rows(block: &Array2<f64>) -> Array2<f64> {
    let mut out = block.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mean = row.sum() / row.len() as f64;
        row.mapv_inplace(|v| v - mean);
    }
    out
}

/// Center every row and scale it to unit variance (constant rows stay zero).
pub fn standardize_rows(block: &Array2<f64>) -> Array2<f64> {
    let mut out = center_rows(block);
    for mut row in out.axis_iter_mut(Axis(0)) {
        let var = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        if var > 0.0 {
            let inv = 1.0 / var.sqrt();
            row.mapv_inplace(|v| v * inv);
        }
    }
    out
}

/// CCA score of centered blocks at every lag up to `max_lag`.
///
/// Univariate pairs keep the sign of the correlation and then agree with
/// [`ncc_all_lags`] on the argmax.
pub fn cca_all_lags(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    max_lag: usize,
    ridge: Ridge,
) -> Result<LagScan> {
    let n = x.ncols();
    if y.ncols() != n {
        return Err(Error::invalid(format!(
            "blocks must have equal length, got {n} and {}",
            y.ncols()
        )));
    }
    if n == 0 || max_lag >= n {
        return Err(Error::invalid(format!("max lag {max_lag} needs more than {n} samples")));
    }
    let (l1, l2) = (x.nrows(), y.nrows());
    let xc: Vec<Vec<f64>> = x.axis_iter(Axis(0)).map(centered).collect();
    let yc: Vec<Vec<f64>> = y.axis_iter(Axis(0)).map(centered).collect();
    let energy = |rows: &[Vec<f64>]| rows.iter().flatten().map(|v| v * v).sum::<f64>();
    if energy(&xc) <= 0.0 || energy(&yc) <= 0.0 {
        return Ok(LagScan::degenerate(max_lag));
    }

    let nfft = fft::fft_len(n, max_lag);
    let fx: Vec<_> = xc.iter().map(|r| fft::spectrum(r, nfft)).collect();
    let fy: Vec<_> = yc.iter().map(|r| fft::spectrum(r, nfft)).collect();
    let cross: Vec<Vec<Vec<f64>>> = fx
        .iter()
        .map(|a| fy.iter().map(|b| fft::cross_correlation_from_spectra(a, b, max_lag)).collect())
        .collect();
    let px: Vec<Vec<Vec<f64>>> =
        xc.iter().map(|a| xc.iter().map(|b| prefix_products(a, b)).collect()).collect();
    let py: Vec<Vec<Vec<f64>>> =
        yc.iter().map(|a| yc.iter().map(|b| prefix_products(a, b)).collect()).collect();

    let signed = l1 == 1 && l2 == 1;
    let total = energy(&xc) * energy(&yc);
    let scores = (0..=2 * max_lag)
        .map(|i| {
            let c = i as i64 - max_lag as i64;
            let ((x0, x1), (y0, y1)) = overlap(n, c);
            let s11 = DMatrix::from_fn(l1, l1, |a, b| px[a][b][x1] - px[a][b][x0]);
            let s22 = DMatrix::from_fn(l2, l2, |a, b| py[a][b][y1] - py[a][b][y0]);
            if s11.trace() * s22.trace() <= 1e-24 * total {
                return 0.0;
            }
            let s12 = DMatrix::from_fn(l1, l2, |a, b| cross[a][b][i]);
            canonical_correlation(&s11, &s12, &s22, ridge, signed).unwrap_or(0.0)
        })
        .collect();
    Ok(LagScan { max_lag, scores, degenerate: false })
}

/// A transformation applied to a standardized window block before scoring.
pub trait BlockTransform: Sync {
    fn transform(&self, block: &Array2<f64>) -> Result<Array2<f64>>;
}

/// The identity transformation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl BlockTransform for Identity {
    fn transform(&self, block: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(block.clone())
    }
}

/// Estimated displacement at one knot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagEstimate {
    pub super_idx: usize,
    pub window_idx: usize,
    pub knot_ms: f64,
    /// Total displacement in samples (base shift plus local lag).
    pub lag_samples: i64,
    /// Displacement `d(knot)` in milliseconds.
    pub lag_ms: f64,
    pub score: f64,
    pub valid: bool,
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagOptions {
    pub ridge: Ridge,
    /// Windows scoring below this are flagged invalid.
    pub threshold: f64,
    /// Refine the peak by parabolic interpolation.
    pub subsample: bool,
}

impl Default for LagOptions {
    fn default() -> Self {
        Self { ridge: Ridge::default(), threshold: 0.3, subsample: false }
    }
}

/// Transform both blocks of a pair and scan all admissible lags.
pub fn scan_pair(
    pair: &WindowPair,
    t1: &dyn BlockTransform,
    t2: &dyn BlockTransform,
    max_lag: usize,
    ridge: Ridge,
) -> Result<LagScan> {
    let x = t1.transform(&standardize_rows(&pair.x))?;
    let y = t2.transform(&standardize_rows(&pair.y))?;
    let max_lag = max_lag.min(pair.len().saturating_sub(1));
    cca_all_lags(x.view(), y.view(), max_lag, ridge)
}

/// Lag estimates for every window of one super-segment, sensor 2 offset by
/// `base_shift` samples.
#[allow(clippy::too_many_arguments)]
pub fn super_lag_estimates(
    s1: &Signal,
    s2: &Signal,
    grid: &WindowGrid,
    super_idx: usize,
    base_shift: i64,
    t1: &dyn BlockTransform,
    t2: &dyn BlockTransform,
    opts: &LagOptions,
) -> Result<Vec<LagEstimate>> {
    let sup = grid
        .supers
        .get(super_idx)
        .ok_or_else(|| Error::invalid(format!("super-segment {super_idx} out of range")))?;
    let period = grid.period_ms();
    (0..sup.windows.len())
        .into_par_iter()
        .map(|wi| {
            let span = sup.windows[wi];
            let pair = match extract_window_pair(s1, s2, grid, super_idx, wi, base_shift) {
                Ok(p) => p,
                Err(_) => {
                    return Ok(LagEstimate {
                        super_idx,
                        window_idx: wi,
                        knot_ms: grid.knot_ms(span),
                        lag_samples: base_shift,
                        lag_ms: base_shift as f64 * period,
                        score: 0.0,
                        valid: false,
                        truncated: true,
                    })
                }
            };
            let scan = scan_pair(&pair, t1, t2, grid.max_lag(), opts.ridge)?;
            let (lag, score) = scan.argmax();
            let local = if opts.subsample { scan.refined_argmax() } else { lag as f64 };
            Ok(LagEstimate {
                super_idx,
                window_idx: wi,
                knot_ms: pair.knot_ms,
                lag_samples: base_shift + lag,
                lag_ms: (base_shift as f64 + local) * period,
                score,
                valid: !scan.degenerate && score >= opts.threshold,
                truncated: pair.truncated,
            })
        })
        .collect()
}

/// Lag estimates for all windows of the grid, given one base shift per
/// super-segment. Results are ordered by knot.
pub fn windowed_lag_estimates(
    s1: &Signal,
    s2: &Signal,
    grid: &WindowGrid,
    t1: &dyn BlockTransform,
    t2: &dyn BlockTransform,
    opts: &LagOptions,
    base_shifts: &[i64],
) -> Result<Vec<LagEstimate>> {
    if !(0.0..1.0).contains(&opts.threshold) {
        return Err(Error::invalid(format!("threshold must be in [0, 1), got {}", opts.threshold)));
    }
    if base_shifts.len() != grid.super_count() {
        return Err(Error::invalid(format!(
            "{} base shifts for {} super-segments",
            base_shifts.len(),
            grid.super_count()
        )));
    }
    let mut out = Vec::with_capacity(grid.window_count());
    for (si, &b) in base_shifts.iter().enumerate() {
        out.extend(super_lag_estimates(s1, s2, grid, si, b, t1, t2, opts)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn lcg_noise(seed: u64, n: usize) -> Vec<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn self_correlation_is_one_at_zero_lag() {
        let x = lcg_noise(1, 300);
        let scan = ncc_all_lags(&x, &x, 50).unwrap();
        let (lag, score) = scan.argmax();
        assert_eq!(lag, 0);
        assert!((score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn delayed_copy_peaks_at_delay() {
        let x = lcg_noise(2, 400);
        let mut y = vec![0.0; 7];
        y.extend_from_slice(&x[..393]);
        let scan = ncc_all_lags(&x, &y, 60).unwrap();
        assert_eq!(scan.argmax().0, 7);
    }

    #[test]
    fn constant_window_is_degenerate() {
        let x = vec![3.0; 64];
        let y = lcg_noise(3, 64);
        let scan = ncc_all_lags(&x, &y, 10).unwrap();
        assert!(scan.degenerate);
        assert!(scan.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn unequal_lengths_are_rejected() {
        assert!(ncc_all_lags(&[1.0, 2.0], &[1.0], 0).is_err());
        assert!(ncc_all_lags(&[1.0, 2.0], &[1.0, 3.0], 2).is_err());
    }

    #[test]
    fn cca_of_mixed_copy_is_full_rank() {
        let n = 500;
        let rows: Vec<Vec<f64>> = (0..3).map(|c| lcg_noise(10 + c, n)).collect();
        let x = Array2::from_shape_fn((3, n), |(c, i)| rows[c][i]);
        let x = center_rows(&x);
        let a = array![[2.0, 0.5, 0.0], [0.1, 1.0, -0.3], [0.0, 0.2, 1.5]];
        let y = a.dot(&x);
        let score = cca_score(x.view(), y.view(), 0.0).unwrap();
        assert!((score - 3.0).abs() < 1e-6, "{score}");
    }

    #[test]
    fn univariate_cca_is_absolute_pearson() {
        let n = 256;
        let x = lcg_noise(20, n);
        let noise = lcg_noise(21, n);
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, b)| -0.7 * a + b).collect();
        let xa = center_rows(&Array2::from_shape_vec((1, n), x.clone()).unwrap());
        let ya = center_rows(&Array2::from_shape_vec((1, n), y.clone()).unwrap());
        let score = cca_score(xa.view(), ya.view(), 0.0).unwrap();
        let (mx, my) = (x.iter().sum::<f64>() / n as f64, y.iter().sum::<f64>() / n as f64);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let pearson = sxy / (sxx * syy).sqrt();
        assert!((score - pearson.abs()).abs() < 1e-9);
    }

    #[test]
    fn independent_noise_scores_below_permutation_null_tail() {
        let (n, l) = (2000, 3);
        let mk = |seed: u64| {
            let rows: Vec<Vec<f64>> = (0..l as u64).map(|c| lcg_noise(seed * 10 + c, n)).collect();
            center_rows(&Array2::from_shape_fn((l, n), |(c, i)| rows[c][i]))
        };
        let x = mk(1);
        let y = mk(2);
        let observed = cca_score(x.view(), y.view(), 0.0).unwrap();
        assert!(observed < 0.5 * l as f64);
        // permutation null: circularly rotate y's columns
        let mut null: Vec<f64> = (1..=99)
            .map(|k| {
                let shift = k * 17;
                let yr = Array2::from_shape_fn((l, n), |(c, i)| y[[c, (i + shift) % n]]);
                cca_score(x.view(), yr.view(), 0.0).unwrap()
            })
            .collect();
        null.sort_by(f64::total_cmp);
        let median = null[49];
        assert!(observed < 3.0 * median.max(1e-3), "observed {observed}, null median {median}");
        assert!(null.iter().all(|&s| s < 0.3 * l as f64));
    }

    #[test]
    fn cca_all_lags_univariate_matches_ncc_argmax() {
        let x = lcg_noise(30, 300);
        let y: Vec<f64> = (0..300).map(|i| x[(i + 290) % 300] + 0.3 * lcg_noise(31, 300)[i]).collect();
        let ncc = ncc_all_lags(&x, &y, 40).unwrap();
        let xa = Array2::from_shape_vec((1, 300), x).unwrap();
        let ya = Array2::from_shape_vec((1, 300), y).unwrap();
        let cca = cca_all_lags(xa.view(), ya.view(), 40, Ridge::default()).unwrap();
        assert_eq!(ncc.argmax().0, cca.argmax().0);
        for (a, b) in ncc.scores.iter().zip(&cca.scores) {
            assert!((a / (1.0 + 1e-4) - b).abs() < 1e-9);
        }
    }

    #[test]
    fn parabolic_refinement_finds_fractional_peak() {
        let scan = LagScan { max_lag: 2, scores: vec![0.0, 0.5, 0.9, 0.7, 0.1], degenerate: false };
        let r = scan.refined_argmax();
        assert!(r > 0.0 && r < 0.5, "{r}");
    }
}
