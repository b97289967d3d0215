//! Alternating training of the transformation networks.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::TransformNet;
use super::objective::{window_loss_and_grad, Side};
use crate::correlation::{
    cca_all_lags, standardize_rows, windowed_lag_estimates, BlockTransform, Identity,
    LagEstimate, LagOptions, Ridge,
};
use crate::error::{Error, Result};
use crate::segmentation::{extract_window_pair, WindowGrid};
use crate::signal::Signal;

/// Which networks are trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    /// Only the first network; the second stays the identity.
    First,
    /// Both networks, alternating.
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub outer_iterations: usize,
    pub threshold: f64,
    pub seed: u64,
    pub ridge: Ridge,
    pub batch_size: usize,
    /// Stop an epoch loop once the relative loss improvement drops below this.
    pub early_stop: f64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lr: 0.0004,
            epochs: 25,
            outer_iterations: 1,
            threshold: 0.3,
            seed: 0,
            ridge: Ridge::default(),
            batch_size: 8,
            early_stop: 1e-5,
            mode: TrainMode::First,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        if self.outer_iterations == 0 {
            return Err(Error::invalid("outer_iterations must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!("threshold must be in [0, 1), got {}", self.threshold)));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// A window pair prepared for training.
struct TrainWindow {
    x: Array2<f64>,
    y: Array2<f64>,
    max_lag: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean window loss per epoch, per training phase.
    pub phases: Vec<Vec<f64>>,
    /// Windows used in each phase.
    pub active: Vec<usize>,
}

pub struct TrainOutput {
    pub net1: TransformNet,
    pub net2: Option<TransformNet>,
    pub estimates: Vec<LagEstimate>,
    pub history: TrainHistory,
}

fn apply(net: Option<&TransformNet>, b: &Array2<f64>) -> Result<Array2<f64>> {
    match net {
        Some(n) => n.forward(b),
        None => Ok(b.clone()),
    }
}

fn active_windows(
    windows: &[TrainWindow],
    net1: &TransformNet,
    net2: Option<&TransformNet>,
    cfg: &TrainConfig,
) -> Result<Vec<usize>> {
    let scores: Vec<f64> = windows
        .par_iter()
        .map(|w| {
            let u = net1.forward(&w.x)?;
            let v = apply(net2, &w.y)?;
            let scan = cca_all_lags(u.view(), v.view(), w.max_lag, cfg.ridge)?;
            Ok(if scan.degenerate { f64::NEG_INFINITY } else { scan.argmax().1 })
        })
        .collect::<Result<_>>()?;
    Ok((0..windows.len()).filter(|&i| scores[i] >= cfg.threshold).collect())
}

/// Train one network for up to `cfg.epochs` epochs; returns per-epoch losses.
fn train_side(
    net: &mut TransformNet,
    other: Option<&TransformNet>,
    side: Side,
    windows: &[TrainWindow],
    active: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let fixed: Vec<Array2<f64>> = active
        .par_iter()
        .map(|&i| match side {
            Side::First => apply(other, &windows[i].y),
            Side::Second => apply(other, &windows[i].x),
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..active.len()).collect();
    let mut adam = Adam::new(net.params().len(), cfg.lr);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let snapshot: &TransformNet = net;
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&k| {
                    let w = &windows[active[k]];
                    let input = match side {
                        Side::First => &w.x,
                        Side::Second => &w.y,
                    };
                    window_loss_and_grad(snapshot, input, &fixed[k], side, w.max_lag, cfg.beta, cfg.ridge)
                        .map(|(l, g)| (l.loss, g))
                        .map_err(|e| match e {
                            Error::Numerical(m) => Error::Numerical(format!("window {}: {m}", active[k])),
                            other => other,
                        })
                })
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; snapshot.params().len()];
            for (loss, g) in &results {
                total += loss;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(net.params_mut(), &grad);
        }
        let mean = total / active.len() as f64;
        let stop = losses
            .last()
            .is_some_and(|&prev: &f64| (prev - mean) / prev.abs().max(1e-12) < cfg.early_stop);
        losses.push(mean);
        if stop {
            break;
        }
    }
    Ok(losses)
}

/// Train the transformation networks on the windows of `grid`, then
/// estimate lags with the trained networks.
///
/// `base_shifts` holds the sensor-2 offset in samples for every
/// super-segment. Windows scoring below the threshold are dropped from
/// subsequent training.
pub fn train_alternating(
    s1: &Signal,
    s2: &Signal,
    grid: &WindowGrid,
    base_shifts: &[i64],
    mut net1: TransformNet,
    mut net2: Option<TransformNet>,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if cfg.mode == TrainMode::Both && net2.is_none() {
        return Err(Error::invalid("training both sides needs a second network"));
    }
    if base_shifts.len() != grid.super_count() {
        return Err(Error::invalid("one base shift per super-segment required"));
    }
    let mut windows = Vec::with_capacity(grid.window_count());
    for (si, wi, _) in grid.iter_windows() {
        if let Ok(pair) = extract_window_pair(s1, s2, grid, si, wi, base_shifts[si]) {
            let max_lag = grid.max_lag().min(pair.len() - 1);
            windows.push(TrainWindow {
                x: standardize_rows(&pair.x),
                y: standardize_rows(&pair.y),
                max_lag,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainHistory::default();
    let sides: &[Side] = match cfg.mode {
        TrainMode::First => &[Side::First],
        TrainMode::Both => &[Side::First, Side::Second],
    };
    for _ in 0..cfg.outer_iterations {
        for &side in sides {
            let active = active_windows(&windows, &net1, net2.as_ref(), cfg)?;
            if active.is_empty() {
                return Err(Error::NoCorrelatedContent(format!(
                    "all {} windows score below the threshold {}",
                    windows.len(),
                    cfg.threshold
                )));
            }
            log::debug!("training {side:?} on {} of {} windows", active.len(), windows.len());
            let losses = match side {
                Side::First => train_side(&mut net1, net2.as_ref(), side, &windows, &active, cfg, &mut rng)?,
                Side::Second => {
                    let n2 = net2.as_mut().expect("checked above");
                    train_side(n2, Some(&net1), side, &windows, &active, cfg, &mut rng)?
                }
            };
            history.active.push(active.len());
            history.phases.push(losses);
        }
    }
    let opts = LagOptions { ridge: cfg.ridge, threshold: cfg.threshold, subsample: false };
    let t2: &dyn BlockTransform = match net2.as_ref() {
        Some(n) => n,
        None => &Identity,
    };
    let estimates = windowed_lag_estimates(s1, s2, grid, &net1, t2, &opts, base_shifts)?;
    Ok(TrainOutput { net1, net2, estimates, history })
}
