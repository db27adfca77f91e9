//! Exact optimal transport between two bags of embeddings with uniform
//! mass and Euclidean ground cost.
//!
//! Masses are scaled to integers (each of the `n` source tokens supplies
//! `m` units, each of the `m` sink tokens absorbs `n`), and the transport is
//! solved as a min-cost flow by successive shortest paths.

use std::collections::VecDeque;

use crate::error::{contract, Result};
use crate::scalar::Scalar;
use crate::tensor::{euclidean, Tensor};

/// Improvement needed before a Bellman-Ford relaxation is accepted; keeps
/// rounding noise from forming spurious negative cycles.
const RELAX_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    /// `(i, j, mass)` for every nonzero cell of the transport plan; rows of
    /// the first sequence sum to `1/n`, columns of the second to `1/m`.
    pub plan: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

struct Edge {
    to: usize,
    cap: u64,
    cost: f64,
}

struct Graph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    fn new(n: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: u64, cost: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost });
        self.adj[from].push(id);
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.adj[to].push(id + 1);
        id
    }

    /// Shortest path from `s` to `t` in the residual graph (SPFA). Returns
    /// the predecessor edge of every node.
    fn shortest(&self, s: usize, t: usize) -> Option<Vec<Option<usize>>> {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![None; n];
        let mut queued = vec![false; n];
        let mut queue = VecDeque::new();
        dist[s] = 0.0;
        queue.push_back(s);
        queued[s] = true;
        while let Some(u) = queue.pop_front() {
            queued[u] = false;
            for &e in &self.adj[u] {
                let edge = &self.edges[e];
                if edge.cap == 0 {
                    continue;
                }
                let nd = dist[u] + edge.cost;
                if nd < dist[edge.to] - RELAX_EPS {
                    dist[edge.to] = nd;
                    pred[edge.to] = Some(e);
                    if !queued[edge.to] {
                        queued[edge.to] = true;
                        queue.push_back(edge.to);
                    }
                }
            }
        }
        dist[t].is_finite().then_some(pred)
    }
}

/// Word Mover's Distance between the rows of `a` and the rows of `b`.
pub fn wmd<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<AlignmentResult> {
    let (n, m) = (a.rows(), b.rows());
    if n == 0 || m == 0 || a.is_empty() || b.is_empty() {
        return Err(contract("word mover's distance needs two nonempty sequences"));
    }
    if a.cols() != b.cols() {
        return Err(contract(format!(
            "embedding widths differ: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let (s, t) = (n + m, n + m + 1);
    let mut g = Graph::new(n + m + 2);
    let total = (n * m) as u64;
    for i in 0..n {
        g.add(s, i, m as u64, 0.0);
    }
    for j in 0..m {
        g.add(n + j, t, n as u64, 0.0);
    }
    let mut cells = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            let d = euclidean(a.row(i), b.row(j)).as_f64();
            cells.push((i, j, g.add(i, n + j, total, d), d));
        }
    }
    let mut sent = 0u64;
    while sent < total {
        let pred = g
            .shortest(s, t)
            .ok_or_else(|| contract("transport network disconnected"))?;
        let mut push = u64::MAX;
        let mut v = t;
        while v != s {
            let e = pred[v].expect("path reaches the source");
            push = push.min(g.edges[e].cap);
            v = g.edges[e ^ 1].to;
        }
        let mut v = t;
        while v != s {
            let e = pred[v].expect("path reaches the source");
            g.edges[e].cap -= push;
            g.edges[e ^ 1].cap += push;
            v = g.edges[e ^ 1].to;
        }
        sent += push;
    }
    let scale = 1.0 / total as f64;
    let mut plan = Vec::new();
    let mut cost = 0.0;
    for (i, j, e, d) in cells {
        let flow = g.edges[e ^ 1].cap;
        if flow > 0 {
            let mass = flow as f64 * scale;
            plan.push((i, j, mass));
            cost += mass * d;
        }
    }
    Ok(AlignmentResult { plan, cost })
}
