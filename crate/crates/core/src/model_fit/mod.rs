//! Robust extraction of a piecewise warp from noisy knot displacements.
//!
//! Knots are labeled with polynomial models or as outliers by minimizing
//! data cost + Potts smoothness + per-model label cost with α-expansion,
//! alternating with re-fits of the used models.

mod expansion;
mod maxflow;
mod proposals;

pub use expansion::{alpha_expansion, build_neighborhood, labeling_energy, DataCosts, Neighborhood};
pub use proposals::{polyfit, polyfit_l1, propose_models};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::warp::{polyval, Label, PiecewiseWarp, PolyModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    /// Cost per used model.
    pub label_cost: f64,
    /// Width of the smoothness kernel in window units.
    pub c_smooth: f64,
    /// Multiplier of the smoothness term.
    pub smooth_weight: f64,
    /// Outlier cost, in ms of residual.
    pub gamma: f64,
    pub n_neighbors: usize,
    /// Polynomial degree of the models (0, 1 or 2).
    pub family: usize,
    pub max_curvature: Option<f64>,
    /// Initial proposal count; `None` uses `max(50, knots / 2)`.
    pub proposals: Option<usize>,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            label_cost: 50.0,
            c_smooth: 10.0,
            smooth_weight: 1.0,
            gamma: 10.0,
            n_neighbors: 2,
            family: 2,
            max_curvature: None,
            proposals: None,
            max_iterations: 50,
            tolerance: 1e-6,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.label_cost > 0.0) {
            return Err(Error::invalid("label cost must be > 0"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::invalid("gamma must be > 0"));
        }
        if !(self.c_smooth > 0.0) {
            return Err(Error::invalid("c_smooth must be > 0"));
        }
        if !(self.smooth_weight >= 0.0) {
            return Err(Error::invalid("smooth_weight must be >= 0"));
        }
        if self.n_neighbors == 0 {
            return Err(Error::invalid("n_neighbors must be >= 1"));
        }
        if self.family > 2 {
            return Err(Error::invalid(format!("family must be <= 2, got {}", self.family)));
        }
        Ok(())
    }
}

/// Estimated displacement at one knot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub time_ms: f64,
    pub value_ms: f64,
    pub score: f64,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PearlFit {
    pub warp: PiecewiseWarp,
    pub energy: f64,
    /// Energy after every iteration, starting with the all-outlier labeling.
    pub energies: Vec<f64>,
}

fn cost_matrix(t: &[f64], y: &[f64], models: &[Vec<f64>], gamma: f64) -> Result<DataCosts> {
    let costs: Vec<f64> = (0..t.len())
        .into_par_iter()
        .flat_map_iter(|p| models.iter().map(move |m| (y[p] - polyval(m, t[p])).abs()))
        .collect();
    let costs = costs.into_iter().map(|c| if c.is_finite() { c } else { 1e300 }).collect();
    DataCosts::new(t.len(), models.len(), costs, gamma)
}

const BANNED: f64 = 1e12;

fn used_models(labels: &[Label]) -> Vec<usize> {
    let mut used: Vec<usize> = labels.iter().filter_map(|l| l.model()).collect();
    used.sort_unstable();
    used.dedup();
    used
}

fn members_of(labels: &[Label], m: usize) -> Vec<usize> {
    (0..labels.len()).filter(|&p| labels[p] == Label::Model(m)).collect()
}

/// Label of old model `m` after remapping to the kept set.
fn labels_before(keep: &[usize], m: usize) -> Label {
    Label::Model(keep.iter().position(|&k| k == m).expect("kept"))
}

fn fit_members(t: &[f64], y: &[f64], members: &[usize], degree: usize, max_curvature: Option<f64>) -> Option<Vec<f64>> {
    let mt: Vec<f64> = members.iter().map(|&p| t[p]).collect();
    let my: Vec<f64> = members.iter().map(|&p| y[p]).collect();
    let fit = polyfit_l1(&mt, &my, degree).ok()?;
    match (max_curvature, fit.get(2)) {
        (Some(limit), Some(c2)) if c2.abs() > limit => None,
        _ => Some(fit),
    }
}

/// Fit a piecewise polynomial warp to `knots`.
///
/// Invalid knots are labeled outliers and excluded from the optimization.
pub fn pearl_fit(knots: &[Knot], cfg: &EnergyConfig, seed: u64) -> Result<PearlFit> {
    cfg.validate()?;
    if knots.windows(2).any(|w| w[0].time_ms >= w[1].time_ms) {
        return Err(Error::invalid("knot times must be strictly increasing"));
    }
    let valid: Vec<usize> = (0..knots.len()).filter(|&i| knots[i].valid).collect();
    if valid.is_empty() {
        return Err(Error::NoCorrelatedContent("no valid knots to fit".into()));
    }
    let spacing = {
        let mut d: Vec<f64> = knots.windows(2).map(|w| w[1].time_ms - w[0].time_ms).collect();
        d.sort_by(f64::total_cmp);
        d.get(d.len() / 2).copied().unwrap_or(1.0)
    };
    let t: Vec<f64> = valid.iter().map(|&i| knots[i].time_ms).collect();
    let y: Vec<f64> = valid.iter().map(|&i| knots[i].value_ms).collect();
    let pos: Vec<f64> = t.iter().map(|&ti| (ti - knots[0].time_ms) / spacing).collect();
    let mut graph = build_neighborhood(&pos, cfg.n_neighbors, cfg.c_smooth)?;
    graph.edges.iter_mut().for_each(|e| e.2 *= cfg.smooth_weight);

    let degree = cfg.family.min(valid.len() - 1);
    let count = cfg.proposals.unwrap_or((knots.len() / 2).max(50));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut models = propose_models(&t, &y, degree, count, cfg.max_curvature, &mut rng)?;
    if models.is_empty() {
        return Err(Error::invalid("every proposal violates the curvature bound"));
    }
    let invalid_cost = cfg.gamma * (knots.len() - valid.len()) as f64;

    let base = models.len();
    let mut labels = vec![Label::Outlier; valid.len()];
    let mut costs = cost_matrix(&t, &y, &models, cfg.gamma)?;
    let mut energy = labeling_energy(&costs, &graph, &labels, cfg.label_cost);
    let mut energies = vec![energy + invalid_cost];
    for _ in 0..cfg.max_iterations {
        let before = energy;
        let (l, e) = alpha_expansion(&costs, &graph, cfg.label_cost, &labels)?;
        labels = l;
        energy = e;
        for m in used_models(&labels) {
            let members = members_of(&labels, m);
            let deg = (models[m].len() - 1).min(members.len() - 1);
            let Some(refit) = fit_members(&t, &y, &members, deg, cfg.max_curvature) else { continue };
            let old = std::mem::replace(&mut models[m], refit);
            let trial = cost_matrix(&t, &y, &models, cfg.gamma)?;
            let e = labeling_energy(&trial, &graph, &labels, cfg.label_cost);
            if e <= energy {
                costs = trial;
                energy = e;
            } else {
                models[m] = old;
            }
        }
        // α-expansion cannot drop a model whose knots would go to several
        // different labels; try deleting each used model outright.
        for m in used_models(&labels) {
            let mut banned = costs.clone();
            for p in 0..banned.nodes {
                banned.costs[p * banned.models + m] = BANNED;
            }
            let start: Vec<Label> =
                labels.iter().map(|&l| if l == Label::Model(m) { Label::Outlier } else { l }).collect();
            let (l, _) = alpha_expansion(&banned, &graph, cfg.label_cost, &start)?;
            let e = labeling_energy(&costs, &graph, &l, cfg.label_cost);
            if e < energy {
                labels = l;
                energy = e;
            }
        }
        energies.push(energy + invalid_cost);
        if before - energy < cfg.tolerance {
            break;
        }
        // Drop stale candidates, then offer merges of neighbouring models.
        let used = used_models(&labels);
        let mut keep: Vec<usize> = (0..base).collect();
        keep.extend(used.iter().copied().filter(|&m| m >= base));
        let mut next: Vec<Vec<f64>> = keep.iter().map(|&m| models[m].clone()).collect();
        for l in labels.iter_mut() {
            if let Label::Model(m) = *l {
                *l = Label::Model(keep.iter().position(|&k| k == m).expect("used model kept"));
            }
        }
        for (i, &a) in used.iter().enumerate() {
            for &b in &used[i + 1..] {
                let touching = graph.edges.iter().any(|&(p, q, _)| {
                    let (lp, lq) = (labels_before(&keep, a), labels_before(&keep, b));
                    (labels[p] == lp && labels[q] == lq) || (labels[p] == lq && labels[q] == lp)
                });
                if !touching {
                    continue;
                }
                let mut members = members_of(&labels, keep.iter().position(|&k| k == a).expect("kept"));
                members.extend(members_of(&labels, keep.iter().position(|&k| k == b).expect("kept")));
                members.sort_unstable();
                let deg = degree.min(members.len() - 1);
                if let Some(m) = fit_members(&t, &y, &members, deg, cfg.max_curvature) {
                    next.push(m);
                }
            }
        }
        models = next;
        costs = cost_matrix(&t, &y, &models, cfg.gamma)?;
    }

    // Keep used models only, ordered by their first knot.
    let mut order: Vec<usize> = Vec::new();
    for l in &labels {
        if let Label::Model(m) = *l {
            if !order.contains(&m) {
                order.push(m);
            }
        }
    }
    let mut out_models = Vec::with_capacity(order.len());
    for &m in &order {
        let members = (0..labels.len()).filter(|&p| labels[p] == Label::Model(m));
        let (lo, hi) = members.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(t[p]), hi.max(t[p]))
        });
        out_models.push(PolyModel::new(models[m].clone(), (lo, hi)));
    }
    let mut out_labels = vec![Label::Outlier; knots.len()];
    for (k, &i) in valid.iter().enumerate() {
        if let Label::Model(m) = labels[k] {
            out_labels[i] = Label::Model(order.iter().position(|&o| o == m).expect("used model"));
        }
    }
    let warp = PiecewiseWarp {
        family: cfg.family,
        models: out_models,
        knots: knots.iter().map(|k| k.time_ms).collect(),
        labels: out_labels,
        origin_ms: 0.0,
    };
    Ok(PearlFit { warp, energy: energy + invalid_cost, energies })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knots_from(t: &[f64], y: &[f64]) -> Vec<Knot> {
        t.iter().zip(y).map(|(&a, &b)| Knot { time_ms: a, value_ms: b, score: 1.0, valid: true }).collect()
    }

    #[test]
    fn planted_quadratic_is_recovered() {
        let t: Vec<f64> = (0..120).map(|i| i as f64 * 25_000.0).collect();
        let truth = |x: f64| 120.0 + 3e-4 * x + 1e-10 * x * x;
        let y: Vec<f64> = t.iter().map(|&x| truth(x)).collect();
        let fit = pearl_fit(&knots_from(&t, &y), &EnergyConfig::default(), 1).unwrap();
        assert_eq!(fit.warp.models.len(), 1);
        let mae = t.iter().map(|&x| (fit.warp.evaluate(x).unwrap() - truth(x)).abs()).sum::<f64>() / t.len() as f64;
        assert!(mae < 1.0, "{mae}");
        assert!(fit.energies.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn invalid_knots_are_outliers() {
        let t: Vec<f64> = (0..30).map(|i| i as f64 * 1000.0).collect();
        let y = vec![50.0; 30];
        let mut knots = knots_from(&t, &y);
        knots[4].valid = false;
        knots[4].value_ms = 9999.0;
        let fit = pearl_fit(&knots, &EnergyConfig::default(), 0).unwrap();
        assert!(fit.warp.labels[4].is_outlier());
        assert_eq!(fit.warp.outlier_count(), 1);
        assert!((fit.warp.evaluate(4000.0).unwrap() - 50.0).abs() < 1e-6);
    }

    #[test]
    fn no_valid_knots_is_an_error() {
        let knots = vec![Knot { time_ms: 0.0, value_ms: 0.0, score: 0.0, valid: false }];
        assert!(pearl_fit(&knots, &EnergyConfig::default(), 0).is_err());
    }
}
