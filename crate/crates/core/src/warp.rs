//! Piecewise-polynomial warping functions.
//!
//! A warp maps a time `t` on the reference (sensor 1) axis to the
//! displacement `d(t)` such that the same event appears at time `t + d(t)`
//! on sensor 2's clock. All times are milliseconds relative to
//! [`PiecewiseWarp::origin_ms`].

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{interp_at, Signal};

/// Assignment of a knot to a fitted model or to the outlier pseudo-model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "i64", into = "i64")]
pub enum Label {
    Model(usize),
    Outlier,
}

impl Label {
    pub fn model(self) -> Option<usize> {
        match self {
            Label::Model(m) => Some(m),
            Label::Outlier => None,
        }
    }

    pub fn is_outlier(self) -> bool {
        matches!(self, Label::Outlier)
    }
}

impl From<i64> for Label {
    fn from(v: i64) -> Self {
        if v < 0 {
            Label::Outlier
        } else {
            Label::Model(v as usize)
        }
    }
}

impl From<Label> for i64 {
    fn from(l: Label) -> Self {
        match l {
            Label::Model(m) => m as i64,
            Label::Outlier => -1,
        }
    }
}

/// Polynomial `c0 + c1 t + c2 t^2 + ...` in milliseconds, valid over `span`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    pub coeffs: Vec<f64>,
    pub span: (f64, f64),
}

impl PolyModel {
    pub fn new(coeffs: Vec<f64>, span: (f64, f64)) -> Self {
        Self { coeffs, span }
    }

    pub fn eval(&self, t: f64) -> f64 {
        polyval(&self.coeffs, t)
    }

    /// First derivative at `t`.
    pub fn slope(&self, t: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * t + k as f64 * c)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    fn contains(&self, t: f64) -> bool {
        t >= self.span.0 && t <= self.span.1
    }
}

/// Horner evaluation of ascending-order coefficients.
pub fn polyval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

/// A set of polynomial models with a per-knot labeling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseWarp {
    /// Polynomial degree of the model family.
    pub family: usize,
    pub models: Vec<PolyModel>,
    /// Knot times, strictly increasing.
    pub knots: Vec<f64>,
    pub labels: Vec<Label>,
    /// Absolute time (ms since epoch) of `t = 0`.
    pub origin_ms: f64,
}

impl PiecewiseWarp {
    /// Constant displacement everywhere; `identity()` is `constant(0.0)`.
    pub fn constant(value_ms: f64) -> Self {
        Self {
            family: 0,
            models: vec![PolyModel::new(vec![value_ms], (0.0, 0.0))],
            knots: vec![0.0],
            labels: vec![Label::Model(0)],
            origin_ms: 0.0,
        }
    }

    pub fn identity() -> Self {
        Self::constant(0.0)
    }

    pub fn with_origin(mut self, origin_ms: f64) -> Self {
        self.origin_ms = origin_ms;
        self
    }

    /// Check structural consistency (lengths, ordering, label ranges).
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::invalid("warp has no models"));
        }
        if self.knots.len() != self.labels.len() {
            return Err(Error::invalid(format!(
                "{} knots but {} labels",
                self.knots.len(),
                self.labels.len()
            )));
        }
        if self.knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("knot times must be strictly increasing"));
        }
        for l in &self.labels {
            if let Label::Model(m) = l {
                if *m >= self.models.len() {
                    return Err(Error::invalid(format!("label {m} refers to a missing model")));
                }
            }
        }
        if self.models.iter().any(|m| m.coeffs.is_empty()) {
            return Err(Error::invalid("model with no coefficients"));
        }
        Ok(())
    }

    /// Index of the model used at time `t`.
    ///
    /// A model whose knot span contains `t` is used; ties between
    /// overlapping spans, and times outside every span, go to the model of
    /// the nearest labeled knot.
    pub fn model_index_at(&self, t: f64) -> Result<usize> {
        if self.models.is_empty() {
            return Err(Error::invalid("cannot evaluate a warp with no models"));
        }
        let mut containing = self.models.iter().enumerate().filter(|(_, m)| m.contains(t));
        let first = containing.next();
        if let Some((m, _)) = first {
            if containing.next().is_none() {
                return Ok(m);
            }
        }
        let allow = |m: usize| first.is_none() || self.models[m].contains(t);
        let mut best: Option<(f64, usize)> = None;
        for (k, l) in self.knots.iter().zip(&self.labels) {
            if let Label::Model(m) = *l {
                if !allow(m) {
                    continue;
                }
                let dist = (k - t).abs();
                if best.is_none_or(|(d, _)| dist < d) {
                    best = Some((dist, m));
                }
            }
        }
        match (best, first) {
            (Some((_, m)), _) => Ok(m),
            (None, Some((m, _))) => Ok(m),
            // No labeled knots at all: fall back to the model whose span is closest.
            (None, None) => Ok(self
                .models
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let d = if t < m.span.0 { m.span.0 - t } else { t - m.span.1 };
                    (d, i)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, i)| i)
                .unwrap_or(0)),
        }
    }

    /// Displacement `d(t)` in milliseconds at relative time `t`.
    pub fn evaluate(&self, t: f64) -> Result<f64> {
        let m = self.model_index_at(t)?;
        Ok(self.models[m].eval(t))
    }

    /// Number of knots assigned to the outlier label.
    pub fn outlier_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_outlier()).count()
    }
}

/// Evaluate the warp at time `t` (ms relative to the warp origin).
pub fn evaluate_warp(w: &PiecewiseWarp, t: f64) -> Result<f64> {
    w.evaluate(t)
}

/// Resample sensor-2 signal `s` onto the reference axis of the warp.
///
/// The output has the same length and rate as `s` and starts at the warp
/// origin; output sample `j` at reference time `t_j` takes the value of `s`
/// at its own time `t_j + d(t_j)`.
pub fn apply_warp(s: &Signal, w: &PiecewiseWarp) -> Result<Signal> {
    w.validate()?;
    let n = s.len();
    let period = s.period_ms();
    let offset = w.origin_ms - s.t0();
    let mut positions = Vec::with_capacity(n);
    let mut prev: Option<(f64, f64)> = None;
    for j in 0..n {
        let t = j as f64 * period;
        let d = w.evaluate(t)?;
        let mapped = t + d;
        if let Some((pt, pm)) = prev {
            if mapped <= pm {
                return Err(Error::NonMonotoneWarp { start_ms: pt, end_ms: t });
            }
        }
        prev = Some((t, mapped));
        positions.push(j as f64 + (offset + d) / period);
    }
    let mut out = Array2::zeros((s.channels(), n));
    for c in 0..s.channels() {
        let row = s.channel(c);
        for (j, &pos) in positions.iter().enumerate() {
            out[[c, j]] = interp_at(row, pos);
        }
    }
    Signal::with_names(out, s.fs(), w.origin_ms, s.channel_names().to_vec())
}
