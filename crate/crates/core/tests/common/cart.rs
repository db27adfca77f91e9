//! Exhaustive CART oracle and synthetic region fixtures.

use vqlatent::tree::{fit_tree, tree_metrics, Node, TreeParams};

use super::{randn, rng};
/// Exhaustive CART: every (dim, midpoint) candidate is re-partitioned from
/// scratch and scored by weighted Gini impurity in floating point.
#[derive(Debug)]
pub enum Oracle {
    Split(usize, f64, Box<Oracle>, Box<Oracle>),
    Leaf(Vec<usize>, usize),
}

fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|&c| (c as f64 / n as f64).powi(2)).sum::<f64>()
}

fn counts_of(idx: &[usize], y: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for &i in idx {
        c[y[i]] += 1;
    }
    c
}

pub fn oracle(x: &[Vec<f64>], y: &[usize], idx: Vec<usize>, depth: usize, p: TreeParams, k: usize) -> Oracle {
    let counts = counts_of(&idx, y, k);
    let label = (0..k).fold(0, |b, j| if counts[j] > counts[b] { j } else { b });
    let classes = counts.iter().filter(|&&c| c > 0).count();
    if depth >= p.max_depth || classes <= 1 || idx.len() < 2 * p.min_leaf {
        return Oracle::Leaf(counts, label);
    }
    let n = idx.len() as f64;
    let parent = gini(&counts);
    let mut best: Option<(f64, usize, f64)> = None;
    for d in 0..x[0].len() {
        let mut vals: Vec<f64> = idx.iter().map(|&i| x[i][d]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][d] <= t);
            if l.len() < p.min_leaf || r.len() < p.min_leaf {
                continue;
            }
            let score = l.len() as f64 / n * gini(&counts_of(&l, y, k))
                + r.len() as f64 / n * gini(&counts_of(&r, y, k));
            if score >= parent - 1e-12 {
                continue;
            }
            if best.is_none_or(|b| score < b.0 - 1e-12) {
                best = Some((score, d, t));
            }
        }
    }
    match best {
        None => Oracle::Leaf(counts, label),
        Some((_, d, t)) => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][d] <= t);
            Oracle::Split(
                d,
                t,
                Box::new(oracle(x, y, l, depth + 1, p, k)),
                Box::new(oracle(x, y, r, depth + 1, p, k)),
            )
        }
    }
}

pub fn oracle_predict(o: &Oracle, v: &[f64]) -> usize {
    match o {
        Oracle::Leaf(_, l) => *l,
        Oracle::Split(d, t, l, r) => oracle_predict(if v[*d] <= *t { l } else { r }, v),
    }
}

pub fn same_structure(n: &Node, o: &Oracle) -> bool {
    match (n, o) {
        (Node::Leaf { counts, label }, Oracle::Leaf(c, l)) => counts == c && label == l,
        (
            Node::Split {
                dim,
                threshold,
                left,
                right,
            },
            Oracle::Split(d, t, l, r),
        ) => dim == d && (threshold - t).abs() <= 1e-12 * t.abs().max(1.0) && same_structure(left, l) && same_structure(right, r),
        _ => false,
    }
}

/// Purest target leaf, then most samples, then leftmost.
pub fn oracle_path(o: &Oracle, target: usize) -> Option<(Vec<(usize, f64, bool)>, f64, usize)> {
    fn walk(o: &Oracle, target: usize, trail: &mut Vec<(usize, f64, bool)>, best: &mut Option<(Vec<(usize, f64, bool)>, f64, usize)>) {
        match o {
            Oracle::Leaf(c, l) => {
                if *l != target {
                    return;
                }
                let n: usize = c.iter().sum();
                let purity = c[target] as f64 / n as f64;
                let better = match best {
                    None => true,
                    Some((_, bp, bn)) => purity > *bp || (purity == *bp && n > *bn),
                };
                if better {
                    *best = Some((trail.clone(), purity, n));
                }
            }
            Oracle::Split(d, t, l, r) => {
                trail.push((*d, *t, true));
                walk(l, target, trail, best);
                trail.pop();
                trail.push((*d, *t, false));
                walk(r, target, trail, best);
                trail.pop();
            }
        }
    }
    let mut best = None;
    walk(o, target, &mut Vec::new(), &mut best);
    best
}

pub fn random_instance(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| randn(&[d], &mut r).into_data()).collect();
    // labels from a noisy oblique rule so that deep trees are needed
    let y = x
        .iter()
        .map(|v| usize::from(v[0] + 0.5 * v[1] - v[2] * v[3] + 0.3 * randn(&[1], &mut r).data()[0] > 0.0))
        .collect();
    (x, y)
}

pub fn cart_matches_oracle(seed: u64) -> bool {
    let (x, y) = random_instance(seed, 200, 8);
    let p = TreeParams {
        max_depth: 3,
        min_leaf: 1 + (seed as usize % 3) * 2,
    };
    let tree = fit_tree(&x, &y, p).unwrap();
    let o = oracle(&x, &y, (0..x.len()).collect(), 0, p, 2);
    if !same_structure(&tree.root, &o) {
        return false;
    }
    let mut r = rng(seed + 1000);
    let probes: Vec<Vec<f64>> = (0..500).map(|_| randn(&[8], &mut r).into_data()).collect();
    x.iter().chain(&probes).all(|v| tree.predict(v) == oracle_predict(&o, v))
}
/// Two well-separated Gaussian blobs in 16 dimensions.
pub fn separable_regions(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut sample = |label: usize, n: usize| -> Vec<(Vec<f64>, usize)> {
        (0..n)
            .map(|_| {
                let mut v = randn(&[16], &mut r).into_data();
                v[3] += if label == 1 { 4.0 } else { -4.0 };
                (v, label)
            })
            .collect()
    };
    let train: Vec<_> = sample(0, 100).into_iter().chain(sample(1, 100)).collect();
    let test: Vec<_> = sample(0, 100).into_iter().chain(sample(1, 100)).collect();
    let (x, y): (Vec<_>, Vec<_>) = train.into_iter().unzip();
    let tree = fit_tree(&x, &y, TreeParams::default()).unwrap();
    let (tx, ty): (Vec<_>, Vec<_>) = test.into_iter().unzip();
    tree_metrics(&tree, &tx, &ty, 1).separability
}
