//! Two-level tiling of a recording into super-segments and windows.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Signal;

const MS_PER_HOUR: f64 = 3_600_000.0;

/// One window on the reference axis, in samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpan {
    pub start: usize,
    /// Number of samples inside the recording; shorter than the nominal
    /// window length only for a truncated tail window.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperSegment {
    pub start: usize,
    pub len: usize,
    pub windows: Vec<WindowSpan>,
}

/// Super-segment/window decomposition of a recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowGrid {
    /// Window length in samples.
    pub window_len: usize,
    /// Super-segment length in samples.
    pub super_len: usize,
    /// Number of full super-segments, `floor(N / z)`.
    pub full_supers: usize,
    /// Windows per full super-segment, `floor(z / w)`.
    pub windows_per_super: usize,
    pub lambda: f64,
    pub fs: f64,
    pub n_samples: usize,
    /// All super-segments, including a shorter trailing one if present.
    pub supers: Vec<SuperSegment>,
}

impl WindowGrid {
    pub fn period_ms(&self) -> f64 {
        1000.0 / self.fs
    }

    /// Largest admissible lag in samples, `floor(lambda * w)`.
    pub fn max_lag(&self) -> usize {
        (self.lambda * self.window_len as f64).floor() as usize
    }

    pub fn super_count(&self) -> usize {
        self.supers.len()
    }

    pub fn window_count(&self) -> usize {
        self.supers.iter().map(|s| s.windows.len()).sum()
    }

    pub fn window(&self, super_idx: usize, window_idx: usize) -> Result<WindowSpan> {
        self.supers
            .get(super_idx)
            .and_then(|s| s.windows.get(window_idx))
            .copied()
            .ok_or_else(|| {
                Error::invalid(format!("window ({super_idx}, {window_idx}) is out of range"))
            })
    }

    /// Knot time (window center, ms relative to the first sample).
    pub fn knot_ms(&self, span: WindowSpan) -> f64 {
        (span.start as f64 + (span.len as f64 - 1.0) / 2.0) * self.period_ms()
    }

    /// All knot times in order.
    pub fn knots(&self) -> Vec<f64> {
        self.iter_windows().map(|(_, _, w)| self.knot_ms(w)).collect()
    }

    /// Iterate `(super_idx, window_idx, span)` in time order.
    pub fn iter_windows(&self) -> impl Iterator<Item = (usize, usize, WindowSpan)> + '_ {
        self.supers
            .iter()
            .enumerate()
            .flat_map(|(si, s)| s.windows.iter().enumerate().map(move |(wi, w)| (si, wi, *w)))
    }
}

/// Plan the segmentation of a recording of `n_samples` at `fs`.
///
/// Rejects plans where `max_drift_ms_per_hr` accumulated over one
/// super-segment could exceed `lambda * w`.
pub fn plan_segmentation(
    n_samples: usize,
    fs: f64,
    w_ms: f64,
    z_ms: f64,
    lambda: f64,
    max_drift_ms_per_hr: f64,
) -> Result<WindowGrid> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::invalid(format!("sampling frequency must be > 0, got {fs}")));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Constraint(format!("0 < lambda < 1 violated: lambda = {lambda}")));
    }
    if !(w_ms > 0.0 && w_ms < z_ms) {
        return Err(Error::Constraint(format!(
            "0 < w < z violated: w = {w_ms} ms, z = {z_ms} ms"
        )));
    }
    let duration_ms = n_samples as f64 * 1000.0 / fs;
    if z_ms > duration_ms + 1e-9 {
        return Err(Error::Constraint(format!(
            "z <= duration violated: z = {z_ms} ms, duration = {duration_ms} ms"
        )));
    }
    if !(max_drift_ms_per_hr >= 0.0) {
        return Err(Error::invalid("max drift rate must be >= 0"));
    }
    let drift_over_super = max_drift_ms_per_hr * z_ms / MS_PER_HOUR;
    if drift_over_super > lambda * w_ms {
        return Err(Error::Constraint(format!(
            "max drift over a super-segment <= lambda * w violated: {drift_over_super} ms > {} ms",
            lambda * w_ms
        )));
    }

    let window_len = (w_ms * fs / 1000.0).round() as usize;
    let super_len = (z_ms * fs / 1000.0).round() as usize;
    if window_len < 2 {
        return Err(Error::Constraint(format!("window of {w_ms} ms has fewer than 2 samples")));
    }
    let windows_per_super = super_len / window_len;
    let full_supers = n_samples / super_len;
    if windows_per_super < 1 || full_supers < 1 {
        return Err(Error::Constraint(format!(
            "M >= 1 and Z >= 1 violated: M = {windows_per_super}, Z = {full_supers}"
        )));
    }

    let mut supers = Vec::with_capacity(full_supers + 1);
    for k in 0..full_supers {
        let start = k * super_len;
        let windows = (0..windows_per_super)
            .map(|m| WindowSpan { start: start + m * window_len, len: window_len })
            .collect();
        supers.push(SuperSegment { start, len: super_len, windows });
    }

    // Trailing partial super-segment: proportionally fewer windows, plus a
    // truncated tail window when at least half a window remains.
    let tail_start = full_supers * super_len;
    let remaining = n_samples - tail_start;
    if remaining > 0 {
        let mut windows: Vec<WindowSpan> = (0..remaining / window_len)
            .map(|m| WindowSpan { start: tail_start + m * window_len, len: window_len })
            .collect();
        let leftover = remaining % window_len;
        if leftover * 2 >= window_len {
            windows.push(WindowSpan { start: n_samples - leftover, len: leftover });
        }
        if !windows.is_empty() {
            supers.push(SuperSegment { start: tail_start, len: remaining, windows });
        }
    }

    Ok(WindowGrid {
        window_len,
        super_len,
        full_supers,
        windows_per_super,
        lambda,
        fs,
        n_samples,
        supers,
    })
}

/// A pair of co-located sample blocks, sensor 2's offset by the base shift.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    /// Start sample of `x` in sensor 1.
    pub start1: usize,
    /// Start sample of `y` in sensor 2.
    pub start2: usize,
    pub knot_ms: f64,
    pub truncated: bool,
}

impl WindowPair {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }
}

/// Extract the sensor-1 block of a window and the sensor-2 block starting
/// `base_shift` samples later.
///
/// When either block runs past its recording, both are cut to the common
/// in-range part and the pair is flagged truncated; less than half a window
/// is an error.
pub fn extract_window_pair(
    s1: &Signal,
    s2: &Signal,
    grid: &WindowGrid,
    super_idx: usize,
    window_idx: usize,
    base_shift: i64,
) -> Result<WindowPair> {
    let span = grid.window(super_idx, window_idx)?;
    let w = grid.window_len as i64;
    let a = span.start as i64;
    let n1 = s1.len() as i64;
    let n2 = s2.len() as i64;
    // offsets k in [lo, hi) with a + k in [0, n1) and a + b + k in [0, n2)
    let lo = 0.max(-(a + base_shift));
    let hi = w.min(n1 - a).min(n2 - a - base_shift);
    let len = hi - lo;
    if len * 2 < w {
        return Err(Error::invalid(format!(
            "window ({super_idx}, {window_idx}) with base shift {base_shift} keeps only {} of {w} samples",
            len.max(0)
        )));
    }
    let start1 = (a + lo) as usize;
    let start2 = (a + base_shift + lo) as usize;
    let len = len as usize;
    let x = s1.data().slice(s![.., start1..start1 + len]).to_owned();
    let y = s2.data().slice(s![.., start2..start2 + len]).to_owned();
    Ok(WindowPair {
        x,
        y,
        start1,
        start2,
        knot_ms: grid.knot_ms(span),
        truncated: len < grid.window_len,
    })
}
