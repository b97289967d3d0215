//! Dinic max-flow / min-cut on real capacities.

use std::collections::VecDeque;

struct Edge {
    to: usize,
    cap: f64,
}

pub(crate) struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

const EPS: f64 = 1e-12;

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        Self { edges: Vec::new(), adj: vec![Vec::new(); nodes] }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) {
        if cap <= 0.0 || from == to {
            return;
        }
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0.0 });
    }

    fn levels(&self, s: usize, t: usize) -> Option<Vec<i64>> {
        let mut level = vec![-1; self.adj.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let edge = &self.edges[e];
                if edge.cap > EPS && level[edge.to] < 0 {
                    level[edge.to] = level[u] + 1;
                    queue.push_back(edge.to);
                }
            }
        }
        (level[t] >= 0).then_some(level)
    }

    fn augment(&mut self, u: usize, t: usize, pushed: f64, level: &[i64], iter: &mut [usize]) -> f64 {
        if u == t {
            return pushed;
        }
        while iter[u] < self.adj[u].len() {
            let e = self.adj[u][iter[u]];
            let (to, cap) = (self.edges[e].to, self.edges[e].cap);
            if cap > EPS && level[to] == level[u] + 1 {
                let got = self.augment(to, t, pushed.min(cap), level, iter);
                if got > 0.0 {
                    self.edges[e].cap -= got;
                    self.edges[e ^ 1].cap += got;
                    return got;
                }
            }
            iter[u] += 1;
        }
        0.0
    }

    /// Maximum flow value and, per node, whether it lies on the sink side
    /// of a minimum cut.
    pub fn min_cut(mut self, s: usize, t: usize) -> (f64, Vec<bool>) {
        let mut flow = 0.0;
        while let Some(level) = self.levels(s, t) {
            let mut iter = vec![0; self.adj.len()];
            loop {
                let f = self.augment(s, t, f64::INFINITY, &level, &mut iter);
                if f <= 0.0 {
                    break;
                }
                flow += f;
            }
        }
        let reach = self.levels(s, s).expect("source reaches itself");
        (flow, reach.iter().map(|&l| l < 0).collect())
    }
}
