//! Polynomial fitting and random minimal-subset proposals.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::warp::polyval;

/// Affine map of times into roughly `[-1, 1]` for well-conditioned fits.
#[derive(Clone, Copy, Debug)]
struct Scale {
    mid: f64,
    half: f64,
}

impl Scale {
    fn of(times: &[f64]) -> Self {
        let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let half = ((hi - lo) / 2.0).max(1.0);
        Self { mid: (lo + hi) / 2.0, half }
    }

    fn apply(&self, t: f64) -> f64 {
        (t - self.mid) / self.half
    }

    /// Coefficients in scaled time to ascending coefficients in raw time.
    fn unscale(&self, a: &[f64]) -> Vec<f64> {
        // sum_k a_k ((t - m) / s)^k, expanded by the binomial theorem
        let d = a.len();
        let mut out = vec![0.0; d];
        for (k, &ak) in a.iter().enumerate() {
            let coef = ak / self.half.powi(k as i32);
            let mut binom = 1.0;
            for j in 0..=k {
                out[j] += coef * binom * (-self.mid).powi((k - j) as i32);
                binom = binom * (k - j) as f64 / (j + 1) as f64;
            }
        }
        out
    }
}

/// Weighted least-squares polynomial of `degree` through `(t, y)`;
/// ascending raw-time coefficients.
pub fn polyfit_weighted(t: &[f64], y: &[f64], w: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = t.len();
    if n < degree + 1 {
        return Err(Error::invalid(format!(
            "need at least {} points for degree {degree}, got {n}",
            degree + 1
        )));
    }
    let sc = Scale::of(t);
    let a = DMatrix::from_fn(n, degree + 1, |i, k| w[i].sqrt() * sc.apply(t[i]).powi(k as i32));
    let b = DVector::from_fn(n, |i, _| w[i].sqrt() * y[i]);
    let svd = a.svd(true, true);
    let x = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Numerical(format!("polynomial fit failed: {e}")))?;
    Ok(sc.unscale(x.as_slice()))
}

pub fn polyfit(t: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    polyfit_weighted(t, y, &vec![1.0; t.len()], degree)
}

/// Least squares followed by iteratively reweighted least squares towards
/// the least-absolute-deviation fit.
pub fn polyfit_l1(t: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    let mut coeffs = polyfit(t, y, degree)?;
    for _ in 0..20 {
        let w: Vec<f64> =
            t.iter().zip(y).map(|(&ti, &yi)| 1.0 / (yi - polyval(&coeffs, ti)).abs().max(1e-3)).collect();
        let next = polyfit_weighted(t, y, &w, degree)?;
        let change = next.iter().zip(&coeffs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        coeffs = next;
        if change < 1e-12 {
            break;
        }
    }
    Ok(coeffs)
}

/// Exact fits to random local minimal subsets of the points.
///
/// Each proposal picks an anchor point and a random neighbourhood width,
/// then draws `degree + 1` distinct points from that neighbourhood.
/// Quadratics with `|c2| > max_curvature` are dropped; for the quadratic
/// family half as many linear proposals are added as a fallback.
pub fn propose_models<R: Rng + ?Sized>(
    t: &[f64],
    y: &[f64],
    degree: usize,
    count: usize,
    max_curvature: Option<f64>,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if degree > 2 {
        return Err(Error::invalid(format!("polynomial family must be <= 2, got {degree}")));
    }
    if t.len() < degree + 1 {
        return Err(Error::invalid(format!(
            "need at least {} valid knots to propose degree-{degree} models, got {}",
            degree + 1,
            t.len()
        )));
    }
    let mut out = sample_family(t, y, degree, count, rng)?;
    if let Some(limit) = max_curvature {
        out.retain(|c| c.len() < 3 || c[2].abs() <= limit);
    }
    if degree == 2 {
        out.extend(sample_family(t, y, 1, count.div_ceil(2), rng)?);
    }
    Ok(out)
}

fn sample_family<R: Rng + ?Sized>(
    t: &[f64],
    y: &[f64],
    degree: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let n = t.len();
    let k = degree + 1;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let anchor = rng.random_range(0..n);
        // log-uniform half width between the minimum and the full range
        let lo = k as f64;
        let hi = (n as f64).max(lo);
        let half = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp().round() as usize;
        let start = anchor.saturating_sub(half);
        let end = (anchor + half + 1).min(n);
        let pool: Vec<usize> = (start..end).collect();
        let idx = if pool.len() >= k {
            rand::seq::index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect::<Vec<_>>()
        } else {
            rand::seq::index::sample(rng, n, k).into_iter().collect()
        };
        let ts: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        if ts.iter().any(|a| ts.iter().filter(|&&b| b == *a).count() > 1) {
            continue;
        }
        out.push(polyfit(&ts, &ys, degree)?);
    }
    Ok(out)
}
