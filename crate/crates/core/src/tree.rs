//! Axis-aligned CART over pooled latents, threshold paths through it, and
//! guided moves of a sentence along such a path.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{mean_rows, VqAutoencoder};
use crate::error::{contract, Result};
use crate::scalar::{c, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        dim: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        counts: Vec<usize>,
        label: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: Node,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub n_classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_leaf: 5,
        }
    }
}

/// Sum of squared class counts over the node size, `Σ c_k² / n`, kept as an
/// exact fraction. Lower Gini impurity is a larger value of this quantity.
#[derive(Clone, Copy, Debug)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn of(counts: &[usize]) -> (u128, u128) {
        let n: usize = counts.iter().sum();
        (counts.iter().map(|&c| (c * c) as u128).sum(), n as u128)
    }

    fn split(left: &[usize], right: &[usize]) -> Self {
        let (a, nl) = Self::of(left);
        let (b, nr) = Self::of(right);
        Self {
            num: a * nr + b * nl,
            den: nl * nr,
        }
    }

    fn node(counts: &[usize]) -> Self {
        let (num, den) = Self::of(counts);
        Self { num, den }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

fn class_counts(labels: impl Iterator<Item = usize>, n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for l in labels {
        counts[l] += 1;
    }
    counts
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

/// Midpoint of two consecutive distinct values, kept strictly below `hi`.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

struct Fitter<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    params: TreeParams,
    n_classes: usize,
}

impl Fitter<'_> {
    fn build(&self, idx: Vec<usize>, depth: usize) -> Node {
        let counts = class_counts(idx.iter().map(|&i| self.y[i]), self.n_classes);
        let leaf = |counts: Vec<usize>| Node::Leaf {
            label: majority(&counts),
            counts,
        };
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.params.max_depth || pure || idx.len() < 2 * self.params.min_leaf {
            return leaf(counts);
        }
        let Some((dim, threshold)) = self.best_split(&idx, &counts) else {
            return leaf(counts);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][dim] <= threshold);
        Node::Split {
            dim,
            threshold,
            left: Box::new(self.build(l, depth + 1)),
            right: Box::new(self.build(r, depth + 1)),
        }
    }

    /// Best Gini split strictly better than no split; ties go to the lowest
    /// dimension, then the lowest threshold.
    fn best_split(&self, idx: &[usize], counts: &[usize]) -> Option<(usize, f64)> {
        let dims = self.x[idx[0]].len();
        let mut best: Option<(Purity, usize, f64)> = None;
        let parent = Purity::node(counts);
        for d in 0..dims {
            let mut order = idx.to_vec();
            order.sort_by(|&a, &b| self.x[a][d].total_cmp(&self.x[b][d]).then(a.cmp(&b)));
            let mut left = vec![0usize; self.n_classes];
            let mut right = counts.to_vec();
            for p in 0..order.len() - 1 {
                let yi = self.y[order[p]];
                left[yi] += 1;
                right[yi] -= 1;
                let (lo, hi) = (self.x[order[p]][d], self.x[order[p + 1]][d]);
                if lo == hi {
                    continue;
                }
                let nl = p + 1;
                if nl < self.params.min_leaf || order.len() - nl < self.params.min_leaf {
                    continue;
                }
                let score = Purity::split(&left, &right);
                if score.cmp(&parent) != Ordering::Greater {
                    continue;
                }
                if best.as_ref().is_none_or(|b| score.cmp(&b.0) == Ordering::Greater) {
                    best = Some((score, d, midpoint(lo, hi)));
                }
            }
        }
        best.map(|(_, d, t)| (d, t))
    }
}

/// Fits a CART classifier with Gini impurity. Labels must be `< n_classes`
/// where `n_classes` is one more than the largest label, and at least two
/// classes must be present.
pub fn fit_tree(x: &[Vec<f64>], y: &[usize], params: TreeParams) -> Result<DecisionTree> {
    if x.len() != y.len() || x.is_empty() {
        return Err(contract("features and labels must be nonempty and of equal length"));
    }
    let dims = x[0].len();
    if dims == 0 || x.iter().any(|r| r.len() != dims || r.iter().any(|v| !v.is_finite())) {
        return Err(contract("feature rows must share a positive width and be finite"));
    }
    if params.min_leaf == 0 {
        return Err(contract("min_leaf must be positive"));
    }
    let n_classes = y.iter().max().expect("nonempty") + 1;
    let present = class_counts(y.iter().copied(), n_classes).iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(contract("a tree needs samples from at least two regions"));
    }
    let fitter = Fitter {
        x,
        y,
        params,
        n_classes,
    };
    Ok(DecisionTree {
        root: fitter.build((0..x.len()).collect(), 0),
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        n_classes,
    })
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { label, .. } => return *label,
                Node::Split {
                    dim,
                    threshold,
                    left,
                    right,
                } => node = if x[*dim] <= *threshold { left } else { right },
            }
        }
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        let hits = x.iter().zip(y).filter(|(r, &l)| self.predict(r) == l).count();
        hits as f64 / x.len().max(1) as f64
    }

    pub fn depth(&self) -> usize {
        fn go(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(left).max(go(right)),
            }
        }
        go(&self.root)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeMetrics {
    /// Accuracy.
    pub separability: f64,
    pub density_precision: f64,
    pub density_recall: f64,
    pub f1: f64,
}

/// Binary metrics with `positive` as the positive class. Undefined ratios
/// are reported as 0.
pub fn tree_metrics(tree: &DecisionTree, x: &[Vec<f64>], y: &[usize], positive: usize) -> TreeMetrics {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (r, &l) in x.iter().zip(y) {
        let p = tree.predict(r) == positive;
        match (p, l == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    TreeMetrics {
        separability: tree.accuracy(x, y),
        density_precision: precision,
        density_recall: recall,
        f1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Le,
    Gt,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub dim: usize,
    pub threshold: f64,
    pub branch: Branch,
}

impl Constraint {
    pub fn holds(&self, x: &[f64]) -> bool {
        match self.branch {
            Branch::Le => x[self.dim] <= self.threshold,
            Branch::Gt => x[self.dim] > self.threshold,
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.branch {
            Branch::Le => "<=",
            Branch::Gt => ">",
        };
        write!(f, "dim {} {op} {:.3}", self.dim, self.threshold)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreePath {
    pub steps: Vec<Constraint>,
    /// Class counts of the leaf the path ends in.
    pub leaf_counts: Vec<usize>,
}

impl TreePath {
    pub fn holds(&self, x: &[f64]) -> bool {
        self.steps.iter().all(|s| s.holds(x))
    }
}

impl fmt::Display for TreePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.steps {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

/// Path to the purest leaf labelled `target`; among equally pure leaves
/// the one holding most samples wins, then the leftmost.
pub fn extract_path(tree: &DecisionTree, target: usize) -> Result<TreePath> {
    fn walk(n: &Node, target: usize, trail: &mut Vec<Constraint>, best: &mut Option<TreePath>) {
        match n {
            Node::Leaf { counts, label } => {
                if *label != target {
                    return;
                }
                let better = match best {
                    None => true,
                    Some(b) => {
                        let (t, n) = (counts[target] as u128, counts.iter().sum::<usize>() as u128);
                        let (bt, bn) = (
                            b.leaf_counts[target] as u128,
                            b.leaf_counts.iter().sum::<usize>() as u128,
                        );
                        match (t * bn).cmp(&(bt * n)) {
                            Ordering::Greater => true,
                            Ordering::Equal => n > bn,
                            Ordering::Less => false,
                        }
                    }
                };
                if better {
                    *best = Some(TreePath {
                        steps: trail.clone(),
                        leaf_counts: counts.clone(),
                    });
                }
            }
            Node::Split {
                dim,
                threshold,
                left,
                right,
            } => {
                for (branch, child) in [(Branch::Le, left), (Branch::Gt, right)] {
                    trail.push(Constraint {
                        dim: *dim,
                        threshold: *threshold,
                        branch,
                    });
                    walk(child, target, trail, best);
                    trail.pop();
                }
            }
        }
    }
    let mut best = None;
    walk(&tree.root, target, &mut Vec::new(), &mut best);
    best.ok_or_else(|| contract(format!("tree has no leaf labelled {target}")))
}

/// Per-dimension margin: 5% of the feature range, at least 1e-3.
pub fn margins(x: &[Vec<f64>]) -> Vec<f64> {
    let dims = x.first().map_or(0, Vec::len);
    (0..dims)
        .map(|d| {
            let lo = x.iter().map(|r| r[d]).fold(f64::INFINITY, f64::min);
            let hi = x.iter().map(|r| r[d]).fold(f64::NEG_INFINITY, f64::max);
            (0.05 * (hi - lo)).max(1e-3)
        })
        .collect()
}

/// Sequence of pooled-vector edits that satisfies `path`. Each violated
/// constraint moves its dimension to `threshold ∓ margin`, pulled back to
/// the middle of the feasible interval when the margin would overshoot
/// another constraint on the same dimension. Satisfied constraints are left
/// alone.
pub fn plan_edits(pooled: &[f64], path: &TreePath, margin: &[f64]) -> Vec<(usize, f64)> {
    let interval = |dim: usize| {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for s in path.steps.iter().filter(|s| s.dim == dim) {
            match s.branch {
                Branch::Le => hi = hi.min(s.threshold),
                Branch::Gt => lo = lo.max(s.threshold),
            }
        }
        (lo, hi)
    };
    let mut x = pooled.to_vec();
    let mut edits = Vec::new();
    for s in &path.steps {
        if s.holds(&x) {
            continue;
        }
        let eps = margin[s.dim];
        let mut v = match s.branch {
            Branch::Le => s.threshold - eps,
            Branch::Gt => s.threshold + eps,
        };
        let (lo, hi) = interval(s.dim);
        if !(v > lo && v <= hi) {
            v = midpoint(lo, hi);
        }
        x[s.dim] = v;
        edits.push((s.dim, v));
    }
    edits
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidedMove {
    /// `(dim, new value)` in application order.
    pub edits: Vec<(usize, f64)>,
    /// Original decoding followed by one decoding per edit (word ids).
    pub sentences: Vec<Vec<usize>>,
    pub final_pooled: Vec<f64>,
}

/// Moves a sentence along `path`: after each pooled edit the cumulative
/// pooled delta is added to every pre-quantisation row, which is then
/// re-quantised and decoded.
pub fn guided_move<T: Scalar>(
    ae: &VqAutoencoder<T>,
    words: &[usize],
    path: &TreePath,
    margin: &[f64],
) -> Result<GuidedMove> {
    if margin.iter().any(|&m| !(m > 0.0)) {
        return Err(contract("margins must be positive"));
    }
    let emb = ae.embed(words)?;
    let pooled: Vec<f64> = mean_rows(&emb).into_iter().map(Scalar::as_f64).collect();
    if margin.len() != pooled.len() {
        return Err(contract(format!(
            "{} margins for {} pooled dimensions",
            margin.len(),
            pooled.len()
        )));
    }
    let mut sentences = vec![ae.decode(&ae.codebook.quantize(&emb)?.vectors)?];
    let edits = plan_edits(&pooled, path, margin);
    let mut current = pooled.clone();
    for &(dim, v) in &edits {
        current[dim] = v;
        let mut moved: Tensor<T> = emb.clone();
        for i in 0..moved.rows() {
            for (d, x) in moved.row_mut(i).iter_mut().enumerate() {
                *x = *x + c::<T>(current[d] - pooled[d]);
            }
        }
        sentences.push(ae.decode(&ae.codebook.quantize(&moved)?.vectors)?);
    }
    Ok(GuidedMove {
        edits,
        sentences,
        final_pooled: current,
    })
}

/// Fraction of outputs for which `holds` is true; 0 for no outputs.
pub fn cross_region_consistency<S>(outputs: &[S], holds: impl Fn(&S) -> bool) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    outputs.iter().filter(|o| holds(o)).count() as f64 / outputs.len() as f64
}
