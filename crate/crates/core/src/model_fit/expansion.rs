//! Neighborhood graph, labeling energy and α-expansion with label costs.

use crate::error::{Error, Result};
use crate::warp::Label;

use super::maxflow::FlowGraph;

/// Weighted undirected graph over knots.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub nodes: usize,
    /// `(p, q, w)` with `p < q`.
    pub edges: Vec<(usize, usize, f64)>,
}

/// Symmetric `n`-nearest-neighbour graph on 1-D positions with weights
/// `exp(-d^2 / c^2)`.
pub fn build_neighborhood(positions: &[f64], n: usize, c_smooth: f64) -> Result<Neighborhood> {
    if n == 0 {
        return Err(Error::invalid("n_neighbors must be >= 1"));
    }
    if !(c_smooth > 0.0) {
        return Err(Error::invalid("c_smooth must be > 0"));
    }
    let m = positions.len();
    if m < 2 {
        log::warn!("neighbourhood over {m} knot(s) has no edges");
        return Ok(Neighborhood { nodes: m, edges: Vec::new() });
    }
    let mut pairs = std::collections::BTreeSet::new();
    for p in 0..m {
        let mut others: Vec<usize> = (0..m).filter(|&q| q != p).collect();
        others.sort_by(|&a, &b| {
            let da = (positions[a] - positions[p]).abs();
            let db = (positions[b] - positions[p]).abs();
            da.total_cmp(&db).then(a.cmp(&b))
        });
        for &q in others.iter().take(n) {
            pairs.insert((p.min(q), p.max(q)));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(p, q)| {
            let d = positions[p] - positions[q];
            (p, q, (-(d * d) / (c_smooth * c_smooth)).exp())
        })
        .collect();
    Ok(Neighborhood { nodes: m, edges })
}

/// Data costs of `nodes` knots against `models` real labels, plus the
/// constant outlier cost.
#[derive(Clone, Debug)]
pub struct DataCosts {
    pub nodes: usize,
    pub models: usize,
    /// Row-major `nodes x models`.
    pub costs: Vec<f64>,
    pub outlier: f64,
}

impl DataCosts {
    pub fn new(nodes: usize, models: usize, costs: Vec<f64>, outlier: f64) -> Result<Self> {
        if costs.len() != nodes * models {
            return Err(Error::invalid("data cost matrix has the wrong size"));
        }
        if costs.iter().any(|c| !c.is_finite()) || !outlier.is_finite() {
            return Err(Error::invalid("data costs must be finite"));
        }
        Ok(Self { nodes, models, costs, outlier })
    }

    pub fn cost(&self, p: usize, label: Label) -> f64 {
        match label {
            Label::Model(m) => self.costs[p * self.models + m],
            Label::Outlier => self.outlier,
        }
    }
}

/// Data + Potts smoothness + per-model label cost.
pub fn labeling_energy(
    costs: &DataCosts,
    graph: &Neighborhood,
    labels: &[Label],
    label_cost: f64,
) -> f64 {
    let data: f64 = labels.iter().enumerate().map(|(p, &l)| costs.cost(p, l)).sum();
    let smooth: f64 = graph
        .edges
        .iter()
        .filter(|(p, q, _)| labels[*p] != labels[*q])
        .map(|(_, _, w)| w)
        .sum();
    let mut used: Vec<usize> = labels.iter().filter_map(|l| l.model()).collect();
    used.sort_unstable();
    used.dedup();
    data + smooth + label_cost * used.len() as f64
}

/// Accumulates a binary energy and reduces it to a cut problem.
/// `x = 1` means the node ends on the sink side.
struct BinaryEnergy {
    graph: FlowGraph,
    source: usize,
    sink: usize,
}

impl BinaryEnergy {
    fn new(vars: usize) -> Self {
        Self { graph: FlowGraph::new(vars + 2), source: vars, sink: vars + 1 }
    }

    fn unary(&mut self, v: usize, e0: f64, e1: f64) {
        if e1 > e0 {
            self.graph.add_edge(self.source, v, e1 - e0);
        } else {
            self.graph.add_edge(v, self.sink, e0 - e1);
        }
    }

    /// `k * (1 - x_u) * x_v` with `k >= 0`.
    fn penalize_keep_then_switch(&mut self, u: usize, v: usize, k: f64) {
        self.graph.add_edge(u, v, k);
    }

    /// General submodular pairwise term `E(x_p, x_q)` given as `(A, B, C, D)`
    /// = `(E00, E01, E10, E11)`. Returns unary contributions to add.
    fn pairwise(&mut self, p: usize, q: usize, a: f64, b: f64, c: f64, d: f64) -> (f64, f64) {
        let k = b + c - a - d;
        debug_assert!(k >= -1e-12, "non-submodular term");
        if k > 0.0 {
            self.penalize_keep_then_switch(p, q, k);
        }
        (c - a, d - c)
    }

    fn solve(self) -> Vec<bool> {
        let (s, t) = (self.source, self.sink);
        self.graph.min_cut(s, t).1
    }
}

/// One expansion move towards `alpha`. Returns the proposed labeling.
fn expand(
    costs: &DataCosts,
    graph: &Neighborhood,
    labels: &[Label],
    alpha: Label,
    label_cost: f64,
) -> Vec<Label> {
    let n = labels.len();
    let mut used: Vec<usize> = labels.iter().filter_map(|l| l.model()).collect();
    used.sort_unstable();
    used.dedup();
    let kept: Vec<usize> = used.iter().copied().filter(|&m| Label::Model(m) != alpha).collect();
    let alpha_fresh = matches!(alpha, Label::Model(m) if !used.contains(&m));
    let aux = kept.len() + usize::from(alpha_fresh);
    let mut be = BinaryEnergy::new(n + aux);

    let mut unary: Vec<(f64, f64)> =
        (0..n).map(|p| (costs.cost(p, labels[p]), costs.cost(p, alpha))).collect();
    for &(p, q, w) in &graph.edges {
        let (lp, lq) = (labels[p], labels[q]);
        let pot = |a: Label, b: Label| if a == b { 0.0 } else { w };
        let (up, uq) = be.pairwise(p, q, pot(lp, lq), pot(lp, alpha), pot(alpha, lq), 0.0);
        unary[p].1 += up;
        unary[q].1 += uq;
    }
    for (p, (e0, e1)) in unary.into_iter().enumerate() {
        be.unary(p, e0, e1);
    }
    // A kept model stays paid for while any of its nodes keeps it:
    // min_y h (1 - y) + sum_p h y (1 - x_p).
    for (i, &m) in kept.iter().enumerate() {
        let y = n + i;
        be.unary(y, label_cost, 0.0);
        for p in (0..n).filter(|&p| labels[p] == Label::Model(m)) {
            be.penalize_keep_then_switch(p, y, label_cost);
        }
    }
    // A fresh alpha is paid for once any node switches to it:
    // min_z h z + sum_p h x_p (1 - z).
    if alpha_fresh {
        let z = n + kept.len();
        be.unary(z, 0.0, label_cost);
        for p in 0..n {
            be.penalize_keep_then_switch(z, p, label_cost);
        }
    }
    let sink_side = be.solve();
    (0..n).map(|p| if sink_side[p] { alpha } else { labels[p] }).collect()
}

/// α-expansion over all real labels and the outlier label until no move
/// lowers the energy. The result never has higher energy than `init`.
pub fn alpha_expansion(
    costs: &DataCosts,
    graph: &Neighborhood,
    label_cost: f64,
    init: &[Label],
) -> Result<(Vec<Label>, f64)> {
    if init.len() != costs.nodes || graph.nodes != costs.nodes {
        return Err(Error::invalid("labeling, graph and cost sizes differ"));
    }
    if !(label_cost >= 0.0 && label_cost.is_finite()) {
        return Err(Error::invalid("label cost must be finite and >= 0"));
    }
    if init.iter().any(|l| matches!(l, Label::Model(m) if *m >= costs.models)) {
        return Err(Error::invalid("initial labeling refers to an unknown model"));
    }
    let mut labels = init.to_vec();
    let mut energy = labeling_energy(costs, graph, &labels, label_cost);
    let alphas: Vec<Label> =
        (0..costs.models).map(Label::Model).chain(std::iter::once(Label::Outlier)).collect();
    loop {
        let mut improved = false;
        for &alpha in &alphas {
            let proposal = expand(costs, graph, &labels, alpha, label_cost);
            let e = labeling_energy(costs, graph, &proposal, label_cost);
            if e < energy - 1e-9 {
                labels = proposal;
                energy = e;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok((labels, energy))
}
