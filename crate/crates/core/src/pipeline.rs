//! End-to-end alignment of a signal pair.

use crate::baselines::{nlw_align, plw_align, WarpPath};
use crate::config::{Mode, RunConfig};
use crate::correlation::{super_lag_estimates, BlockTransform, Identity, LagEstimate, LagOptions, Ridge};
use crate::error::{Error, Result};
use crate::model_fit::{pearl_fit, EnergyConfig, Knot};
use crate::segmentation::{plan_segmentation, WindowGrid};
use crate::signal::{resample, Signal};
use crate::transform::{train_alternating, TrainHistory, TransformNet};
use crate::warp::{Label, PiecewiseWarp};

/// Everything an alignment run produces.
#[derive(Clone, Debug)]
pub struct AlignOutput {
    pub warp: PiecewiseWarp,
    /// Per-window lag estimates of the final pass (empty for NLW).
    pub estimates: Vec<LagEstimate>,
    /// Knot displacements in ms, relative knot times.
    pub knots: Vec<Knot>,
    pub grid: Option<WindowGrid>,
    pub net1: Option<TransformNet>,
    pub net2: Option<TransformNet>,
    pub history: Option<TrainHistory>,
    pub path: Option<WarpPath>,
}

impl AlignOutput {
    fn bare(warp: PiecewiseWarp) -> Self {
        Self {
            warp,
            estimates: Vec::new(),
            knots: Vec::new(),
            grid: None,
            net1: None,
            net2: None,
            history: None,
            path: None,
        }
    }
}

/// Knots from lag estimates; `offset_ms` is the start-time difference of
/// the two recordings.
pub fn knots_from_estimates(estimates: &[LagEstimate], offset_ms: f64) -> Vec<Knot> {
    estimates
        .iter()
        .map(|e| Knot { time_ms: e.knot_ms, value_ms: e.lag_ms + offset_ms, score: e.score, valid: e.valid })
        .collect()
}

/// Result of fitting every super-segment in turn.
struct SequentialFit {
    estimates: Vec<LagEstimate>,
    base_shifts: Vec<i64>,
    fits: Vec<Option<PiecewiseWarp>>,
}

fn median(mut v: Vec<i64>) -> Option<i64> {
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    Some(v[v.len() / 2])
}

/// Estimate and fit each super-segment; in sequential mode the next
/// super-segment starts from the shift of this one's fit at its last knot.
#[allow(clippy::too_many_arguments)]
fn fit_supers(
    s1: &Signal,
    s2: &Signal,
    grid: &WindowGrid,
    t1: &dyn BlockTransform,
    t2: &dyn BlockTransform,
    opts: &LagOptions,
    energy: &EnergyConfig,
    seed: u64,
    sequential: bool,
    offset_ms: f64,
) -> Result<SequentialFit> {
    let period = grid.period_ms();
    let mut base = 0i64;
    let mut out = SequentialFit { estimates: Vec::new(), base_shifts: Vec::new(), fits: Vec::new() };
    for si in 0..grid.super_count() {
        let est = super_lag_estimates(s1, s2, grid, si, base, t1, t2, opts)?;
        let knots = knots_from_estimates(&est, offset_ms);
        let fit = match pearl_fit(&knots, energy, seed.wrapping_add(si as u64)) {
            Ok(f) => Some(f.warp),
            Err(Error::NoCorrelatedContent(_)) => None,
            Err(e) => return Err(e),
        };
        log::debug!(
            "super-segment {si}: base {base}, {} of {} windows valid, {} models",
            est.iter().filter(|e| e.valid).count(),
            est.len(),
            fit.as_ref().map_or(0, |w| w.models.len())
        );
        out.base_shifts.push(base);
        if sequential {
            let last = knots.last().map(|k| k.time_ms);
            let fitted = fit.as_ref().zip(last).and_then(|(w, t)| w.evaluate(t).ok());
            base = match fitted {
                Some(d) => ((d - offset_ms) / period).round() as i64,
                None => median(est.iter().filter(|e| e.valid).map(|e| e.lag_samples).collect()).unwrap_or(base),
            };
        }
        out.estimates.extend(est);
        out.fits.push(fit);
    }
    Ok(out)
}

/// Concatenate per-super-segment fits into one warp over all knots.
fn merge_fits(estimates: &[LagEstimate], fits: &[Option<PiecewiseWarp>], family: usize) -> Result<PiecewiseWarp> {
    let mut models = Vec::new();
    let mut knots = Vec::new();
    let mut labels = Vec::new();
    for (si, fit) in fits.iter().enumerate() {
        let times = estimates.iter().filter(|e| e.super_idx == si).map(|e| e.knot_ms);
        match fit {
            Some(w) => {
                let base = models.len();
                models.extend(w.models.iter().cloned());
                knots.extend(w.knots.iter().copied());
                labels.extend(w.labels.iter().map(|l| match *l {
                    Label::Model(m) => Label::Model(base + m),
                    Label::Outlier => Label::Outlier,
                }));
            }
            None => {
                for t in times {
                    knots.push(t);
                    labels.push(Label::Outlier);
                }
            }
        }
    }
    if models.is_empty() {
        return Err(Error::NoCorrelatedContent(format!(
            "no super-segment produced a model ({} windows, none usable)",
            estimates.len()
        )));
    }
    let warp = PiecewiseWarp { family, models, knots, labels, origin_ms: 0.0 };
    warp.validate()?;
    Ok(warp)
}

fn same_rate(s1: &Signal, s2: &Signal) -> Result<Signal> {
    if (s1.fs() - s2.fs()).abs() <= 1e-9 * s1.fs() {
        return Ok(s2.clone());
    }
    log::info!("resampling sensor 2 from {} Hz to {} Hz", s2.fs(), s1.fs());
    resample(s2, s1.fs())
}

/// Align `s2` to `s1` with the method in `cfg.mode`.
pub fn align(s1: &Signal, s2: &Signal, cfg: &RunConfig) -> Result<AlignOutput> {
    align_with(s1, s2, cfg, None)
}

/// Like [`align`], starting the first network from `pretrained` weights.
pub fn align_with(s1: &Signal, s2: &Signal, cfg: &RunConfig, pretrained: Option<TransformNet>) -> Result<AlignOutput> {
    cfg.validate()?;
    let s2 = same_rate(s1, s2)?;
    let offset_ms = s2.t0() - s1.t0();
    if cfg.mode == Mode::Nlw {
        let (warp, path) = nlw_align(s1, &s2, cfg.dtw_radius, cfg.knot_step)?;
        return Ok(AlignOutput { path: Some(path), ..AlignOutput::bare(warp) });
    }
    let grid = plan_segmentation(s1.len(), s1.fs(), cfg.w_ms, cfg.z_ms, cfg.lambda, cfg.max_drift_ms_per_hr)?;
    let ridge = Ridge::Relative(cfg.ridge);
    if cfg.mode == Mode::Plw {
        let warp = plw_align(s1, &s2, &grid, ridge)?;
        return Ok(AlignOutput { grid: Some(grid), ..AlignOutput::bare(warp) });
    }
    let opts = LagOptions { ridge, threshold: cfg.threshold, subsample: false };
    let energy = cfg.energy_config();
    let first = fit_supers(s1, &s2, &grid, &Identity, &Identity, &opts, &energy, cfg.seed, cfg.sequential, offset_ms)?;

    let (fit, net1, net2, history) = if cfg.mode == Mode::Idcca {
        (first, None, None, None)
    } else {
        let net1 = match pretrained {
            Some(p) => {
                let arch = cfg.architecture(s1.channels());
                if *p.architecture() != arch {
                    return Err(Error::ArchitectureMismatch(format!(
                        "pretrained {:?} vs configured {:?}",
                        p.architecture(),
                        arch
                    )));
                }
                p
            }
            None => TransformNet::new(cfg.architecture(s1.channels()), cfg.seed)?,
        };
        let net2 = if cfg.mode == Mode::Bdcca {
            Some(TransformNet::new(cfg.architecture(s2.channels()), cfg.seed.wrapping_add(1))?)
        } else {
            None
        };
        let trained = train_alternating(s1, &s2, &grid, &first.base_shifts, net1, net2, &cfg.train_config())?;
        let t2: &dyn BlockTransform = match trained.net2.as_ref() {
            Some(n) => n,
            None => &Identity,
        };
        let fit =
            fit_supers(s1, &s2, &grid, &trained.net1, t2, &opts, &energy, cfg.seed, cfg.sequential, offset_ms)?;
        (fit, Some(trained.net1), trained.net2, Some(trained.history))
    };
    let warp = merge_fits(&fit.estimates, &fit.fits, cfg.family)?.with_origin(s1.t0());
    Ok(AlignOutput {
        warp,
        knots: knots_from_estimates(&fit.estimates, offset_ms),
        estimates: fit.estimates,
        grid: Some(grid),
        net1,
        net2,
        history,
        path: None,
    })
}
