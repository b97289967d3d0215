//! Comparison aligners: piecewise-linear interpolation of window lags and
//! approximate dynamic time warping.

use nalgebra::DMatrix;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::correlation::{
    center_rows, whiten, windowed_lag_estimates, Identity, LagEstimate, LagOptions, Ridge,
};
use crate::error::{Error, Result};
use crate::segmentation::WindowGrid;
use crate::signal::Signal;
use crate::warp::{Label, PiecewiseWarp, PolyModel};

/// Join consecutive knot lags by straight lines, with no outlier handling.
///
/// Every estimate is used, valid or not; `offset_ms` is added to each lag.
pub fn plw_from_estimates(estimates: &[LagEstimate], offset_ms: f64) -> Result<PiecewiseWarp> {
    if estimates.is_empty() {
        return Err(Error::invalid("no lag estimates to interpolate"));
    }
    let knots: Vec<f64> = estimates.iter().map(|e| e.knot_ms).collect();
    let vals: Vec<f64> = estimates.iter().map(|e| e.lag_ms + offset_ms).collect();
    if knots.len() == 1 {
        let mut w = PiecewiseWarp::constant(vals[0]);
        w.family = 1;
        w.knots = knots;
        return Ok(w);
    }
    let models: Vec<PolyModel> = knots
        .windows(2)
        .zip(vals.windows(2))
        .map(|(t, v)| {
            let slope = (v[1] - v[0]) / (t[1] - t[0]);
            PolyModel::new(vec![v[0] - slope * t[0], slope], (t[0], t[1]))
        })
        .collect();
    let last = models.len() - 1;
    let labels = (0..knots.len()).map(|j| Label::Model(j.min(last))).collect();
    Ok(PiecewiseWarp { family: 1, models, knots, labels, origin_ms: 0.0 })
}

/// Windowed NCC lags (no base shifts) joined piecewise linearly.
pub fn plw_align(s1: &Signal, s2: &Signal, grid: &WindowGrid, ridge: Ridge) -> Result<PiecewiseWarp> {
    let opts = LagOptions { ridge, threshold: 0.0, subsample: false };
    let shifts = vec![0; grid.super_count()];
    let est = windowed_lag_estimates(s1, s2, grid, &Identity, &Identity, &opts, &shifts)?;
    Ok(plw_from_estimates(&est, s2.t0() - s1.t0())?.with_origin(s1.t0()))
}

/// Monotone alignment path between two sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpPath {
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

impl WarpPath {
    /// Boundary, continuity and monotonicity checks.
    pub fn validate(&self, n1: usize, n2: usize) -> Result<()> {
        let first = self.pairs.first().ok_or_else(|| Error::invalid("empty path"))?;
        let last = self.pairs.last().expect("non-empty");
        if *first != (0, 0) || *last != (n1 - 1, n2 - 1) {
            return Err(Error::invalid("path must run from (0, 0) to (N1-1, N2-1)"));
        }
        for w in self.pairs.windows(2) {
            let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            if di > 1 || dj > 1 || (di == 0 && dj == 0) {
                return Err(Error::invalid(format!("path step {:?} -> {:?} is not monotone", w[0], w[1])));
            }
        }
        Ok(())
    }
}

/// Per-row column window `[lo, hi]` for a constrained DTW.
struct Window {
    lo: Vec<usize>,
    hi: Vec<usize>,
}

impl Window {
    fn full(n: usize, m: usize) -> Self {
        Self { lo: vec![0; n], hi: vec![m - 1; n] }
    }
}

fn dtw_windowed(x: &[f64], y: &[f64], win: &Window) -> WarpPath {
    let n = x.len();
    let mut start = Vec::with_capacity(n + 1);
    start.push(0usize);
    for i in 0..n {
        start.push(start[i] + win.hi[i] + 1 - win.lo[i]);
    }
    let cells = start[n];
    let mut acc = vec![f64::INFINITY; cells];
    // 0 = diagonal, 1 = from (i-1, j), 2 = from (i, j-1)
    let mut dir = vec![0u8; cells];
    let get = |acc: &[f64], i: usize, j: usize| -> f64 {
        if j < win.lo[i] || j > win.hi[i] {
            f64::INFINITY
        } else {
            acc[start[i] + j - win.lo[i]]
        }
    };
    for i in 0..n {
        for j in win.lo[i]..=win.hi[i] {
            let c = (x[i] - y[j]).abs();
            let idx = start[i] + j - win.lo[i];
            if i == 0 && j == 0 {
                acc[idx] = c;
                continue;
            }
            let diag = if i > 0 && j > 0 { get(&acc, i - 1, j - 1) } else { f64::INFINITY };
            let up = if i > 0 { get(&acc, i - 1, j) } else { f64::INFINITY };
            let left = if j > win.lo[i] { acc[idx - 1] } else { f64::INFINITY };
            let (best, d) = if diag <= up && diag <= left {
                (diag, 0)
            } else if up <= left {
                (up, 1)
            } else {
                (left, 2)
            };
            acc[idx] = c + best;
            dir[idx] = d;
        }
    }
    let (mut i, mut j) = (n - 1, y.len() - 1);
    let cost = get(&acc, i, j);
    let mut pairs = vec![(i, j)];
    while (i, j) != (0, 0) {
        match dir[start[i] + j - win.lo[i]] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            _ => j -= 1,
        }
        pairs.push((i, j));
    }
    pairs.reverse();
    WarpPath { pairs, cost }
}

/// Exact DTW over the full cost matrix.
pub fn dtw(x: &[f64], y: &[f64]) -> Result<WarpPath> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("DTW needs non-empty sequences"));
    }
    Ok(dtw_windowed(x, y, &Window::full(x.len(), y.len())))
}

fn halve(x: &[f64]) -> Vec<f64> {
    x.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect()
}

fn expand(path: &WarpPath, n: usize, m: usize, radius: usize) -> Window {
    let mut lo = vec![usize::MAX; n];
    let mut hi = vec![0usize; n];
    for &(i, j) in &path.pairs {
        let r0 = (2 * i).saturating_sub(radius);
        let r1 = (2 * i + 1 + radius).min(n - 1);
        let c0 = (2 * j).saturating_sub(radius);
        let c1 = (2 * j + 1 + radius).min(m - 1);
        for r in r0..=r1 {
            lo[r] = lo[r].min(c0);
            hi[r] = hi[r].max(c1);
        }
    }
    for r in 0..n {
        if lo[r] == usize::MAX {
            // rows past the last coarse pair (odd lengths)
            lo[r] = if r > 0 { lo[r - 1] } else { 0 };
            hi[r] = if r > 0 { hi[r - 1] } else { 0 };
        }
    }
    lo[0] = 0;
    hi[n - 1] = m - 1;
    for r in 1..n {
        hi[r] = hi[r].max(hi[r - 1]);
        lo[r] = lo[r].min(hi[r - 1] + 1).min(hi[r]);
    }
    for r in (0..n - 1).rev() {
        lo[r] = lo[r].min(lo[r + 1]);
    }
    Window { lo, hi }
}

/// Approximate DTW by recursive coarsening, solving, and refining within
/// `radius` cells of the projected coarse path.
pub fn fastdtw(x: &[f64], y: &[f64], radius: usize) -> Result<WarpPath> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("DTW needs non-empty sequences"));
    }
    if radius == 0 {
        return Err(Error::invalid("radius must be >= 1"));
    }
    Ok(fastdtw_rec(x, y, radius))
}

fn fastdtw_rec(x: &[f64], y: &[f64], radius: usize) -> WarpPath {
    let min_size = radius + 2;
    if x.len() < min_size || y.len() < min_size {
        return dtw_windowed(x, y, &Window::full(x.len(), y.len()));
    }
    let coarse = fastdtw_rec(&halve(x), &halve(y), radius);
    dtw_windowed(x, y, &expand(&coarse, x.len(), y.len(), radius))
}

/// Project both signals onto their top canonical pair; univariate signals
/// are returned as is.
pub fn cca_project(s1: &Signal, s2: &Signal) -> Result<(Vec<f64>, Vec<f64>)> {
    if s1.channels() == 1 && s2.channels() == 1 {
        return Ok((s1.channel(0).to_vec(), s2.channel(0).to_vec()));
    }
    let n = s1.len().min(s2.len());
    let x = center_rows(&s1.data().slice(ndarray::s![.., ..n]).to_owned());
    let y = center_rows(&s2.data().slice(ndarray::s![.., ..n]).to_owned());
    let to_na = |a: ndarray::Array2<f64>| DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]]);
    let s11 = to_na(x.dot(&x.t()));
    let s12 = to_na(x.dot(&y.t()));
    let s22 = to_na(y.dot(&y.t()));
    let w = whiten(&s11, &s12, &s22, Ridge::default())?;
    let a = w
        .l1
        .transpose()
        .solve_upper_triangular(&w.u.column(0).into_owned())
        .ok_or_else(|| Error::Numerical("canonical projection failed".into()))?;
    let b = w
        .l2
        .transpose()
        .solve_upper_triangular(&w.v_t.row(0).transpose())
        .ok_or_else(|| Error::Numerical("canonical projection failed".into()))?;
    let project = |s: &Signal, v: &nalgebra::DVector<f64>| -> Vec<f64> {
        let coef = Array1::from_iter(v.iter().copied());
        s.data().t().dot(&coef).to_vec()
    };
    Ok((project(s1, &a), project(s2, &b)))
}

/// Displacement per S1 index implied by a path, in samples; collapsed links
/// use the mean matched S2 index.
pub fn path_displacements(path: &WarpPath, n1: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n1];
    let mut count = vec![0usize; n1];
    for &(i, j) in &path.pairs {
        sum[i] += j as f64;
        count[i] += 1;
    }
    (0..n1).map(|i| sum[i] / count[i].max(1) as f64 - i as f64).collect()
}

/// Approximate-DTW alignment turned into a warp with knots every
/// `knot_step` samples of S1.
pub fn nlw_align(s1: &Signal, s2: &Signal, radius: usize, knot_step: usize) -> Result<(PiecewiseWarp, WarpPath)> {
    if (s1.fs() - s2.fs()).abs() > 1e-9 * s1.fs() {
        return Err(Error::invalid("signals must share a sampling rate; resample first"));
    }
    let (x, y) = cca_project(s1, s2)?;
    let path = fastdtw(&x, &y, radius)?;
    let disp = path_displacements(&path, x.len());
    let period = s1.period_ms();
    let offset = s2.t0() - s1.t0();
    let step = knot_step.max(1);
    let mut idx: Vec<usize> = (0..x.len()).step_by(step).collect();
    if *idx.last().expect("non-empty") != x.len() - 1 {
        idx.push(x.len() - 1);
    }
    let estimates: Vec<LagEstimate> = idx
        .iter()
        .map(|&i| LagEstimate {
            super_idx: 0,
            window_idx: i,
            knot_ms: i as f64 * period,
            lag_samples: disp[i].round() as i64,
            lag_ms: disp[i] * period,
            score: 1.0,
            valid: true,
            truncated: false,
        })
        .collect();
    Ok((plw_from_estimates(&estimates, offset)?.with_origin(s1.t0()), path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_path_for_identical_inputs() {
        let x: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin() + 0.01 * i as f64).collect();
        let p = fastdtw(&x, &x, 5).unwrap();
        assert!(p.pairs.iter().enumerate().all(|(k, &(i, j))| i == k && j == k));
        assert_eq!(p.cost, 0.0);
    }

    #[test]
    fn repeated_element_gives_a_single_extra_step() {
        let x = vec![0.0, 3.0, -2.0, 5.0, 1.0, 4.0];
        let mut y = x.clone();
        y.insert(3, x[2]);
        let p = dtw(&x, &y).unwrap();
        let straight = p.pairs.windows(2).filter(|w| w[1].0 == w[0].0 || w[1].1 == w[0].1).count();
        assert_eq!(straight, 1);
        assert_eq!(p.cost, 0.0);
        p.validate(x.len(), y.len()).unwrap();
    }

    #[test]
    fn plw_of_constant_lags_is_flat() {
        let est: Vec<LagEstimate> = (0..5)
            .map(|j| LagEstimate {
                super_idx: 0,
                window_idx: j,
                knot_ms: j as f64 * 1000.0,
                lag_samples: 7,
                lag_ms: 70.0,
                score: 1.0,
                valid: true,
                truncated: false,
            })
            .collect();
        let w = plw_from_estimates(&est, 0.0).unwrap();
        for m in &w.models {
            assert!((m.coeffs[0] - 70.0).abs() < 1e-12 && m.coeffs[1].abs() < 1e-15);
        }
        assert!((w.evaluate(2500.0).unwrap() - 70.0).abs() < 1e-12);
    }

    #[test]
    fn path_displacement_averages_collapsed_links() {
        let p = WarpPath { pairs: vec![(0, 0), (1, 1), (1, 2), (1, 3), (2, 4)], cost: 0.0 };
        let d = path_displacements(&p, 3);
        assert_eq!(d, vec![0.0, 1.0, 2.0]);
    }
}
