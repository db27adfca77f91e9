//! Shared helpers for the integration suites.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqlatent::{Result, Tape64, Tensor64, Var};

pub mod cart;
pub mod grad;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor64 {
    Tensor64::randn(shape, 1.0, rng)
}

pub fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Builds `f` on fresh leaves and reduces its output to a scalar by a
/// fixed random weighting, so every output element contributes.
fn weighted(
    inputs: &[Tensor64],
    weights: &mut Option<Tensor64>,
    seed: u64,
    f: &impl Fn(&mut Tape64, &[Var]) -> Result<Var>,
) -> Result<(Tape64, Vec<Var>, Var)> {
    let mut tape = Tape64::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let shape = tape.shape(out).to_vec();
    let w = weights.get_or_insert_with(|| randn(&shape, &mut rng(seed ^ 0x9e37)));
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv)?;
    let loss = tape.sum(prod);
    Ok((tape, vars, loss))
}

/// Largest relative disagreement between reverse-mode gradients and central
/// finite differences over every input element.
pub fn gradcheck(
    inputs: &[Tensor64],
    seed: u64,
    f: impl Fn(&mut Tape64, &[Var]) -> Result<Var>,
) -> f64 {
    const H: f64 = 1e-5;
    let mut weights = None;
    let (mut tape, vars, loss) = weighted(inputs, &mut weights, seed, &f).expect("forward");
    tape.backward(loss).expect("backward");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    let eval = |xs: &[Tensor64]| {
        let (tape, _, loss) = weighted(xs, &mut weights.clone(), seed, &f).expect("forward");
        tape.value(loss).data()[0]
    };
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] = t.data()[i] + H;
            let up = eval(&xs);
            xs[k].data_mut()[i] = t.data()[i] - H;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[k][i];
            let err = (a - numeric).abs() / (1.0f64).max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    worst
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum average matching cost over all permutations.
pub fn permutation_oracle(a: &Tensor64, b: &Tensor64) -> f64 {
    let n = a.rows();
    permutations(n)
        .iter()
        .map(|p| (0..n).map(|i| dist(a.row(i), b.row(p[i]))).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Linear scan written independently of the library: lowest index wins.
pub fn brute_nearest(table: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for (k, row) in table.iter().enumerate() {
        let mut d = 0.0;
        for (a, b) in row.iter().zip(v) {
            d += (a - b) * (a - b);
        }
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// Randomised quantiser cases, a third with duplicated entries so that
/// distances tie exactly. Returns how many rows disagree with the scan in
/// index or vector.
pub fn kmeans_scan_mismatches(seed: u64, cases: usize) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for case in 0..cases {
        let (k, d, l) = (r.random_range(1..=24), r.random_range(1..=8), r.random_range(1..=6));
        let mut table: Vec<Vec<f64>> = (0..k).map(|_| randn(&[d], &mut r).into_data()).collect();
        if case % 3 == 0 && k > 1 {
            let src = r.random_range(0..k);
            let dst = r.random_range(0..k);
            table[dst] = table[src].clone();
        }
        let mut rows: Vec<Vec<f64>> = (0..l).map(|_| randn(&[d], &mut r).into_data()).collect();
        if case % 5 == 0 {
            rows[0] = table[r.random_range(0..k)].clone();
        }
        let cb = vqlatent::Codebook64::new(Tensor64::from_rows(&table).unwrap()).unwrap();
        let q = cb.quantize(&Tensor64::from_rows(&rows).unwrap()).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let want = brute_nearest(&table, row);
            if q.indices[i] != want || q.vectors.row(i) != table[want].as_slice() {
                bad += 1;
            }
        }
    }
    bad
}

pub const GRAD_TOL: f64 = 1e-6;

/// Planted clusters: returns the largest distance under the best matching.
pub fn planted_cluster_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (k, d) = (8usize, 16usize);
    // means on scaled basis directions: pairwise separation 2·√2 > 1
    let means: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..d).map(|q| if q == j { 2.0 } else { 0.0 }).collect())
        .collect();
    let batch = |r: &mut ChaCha8Rng| {
        let mut rows = Vec::new();
        for m in &means {
            for _ in 0..32 {
                rows.push(m.iter().map(|&v| v + 0.05 * randn(&[1], r).data()[0]).collect::<Vec<f64>>());
            }
        }
        rows.shuffle(r);
        Tensor64::from_rows(&rows).unwrap()
    };
    let first = batch(&mut r);
    let mut cb = vqlatent::Codebook64::seed_from(&first, k, &mut r).unwrap();
    for _ in 0..200 {
        let b = batch(&mut r);
        let q = cb.quantize(&b).unwrap();
        cb.ema_update(&b, &q.indices, 0.99, &mut r).unwrap();
    }
    let mut used = vec![false; k];
    let mut worst = 0.0f64;
    for m in &means {
        let (dist, j) = (0..k)
            .filter(|&j| !used[j])
            .map(|j| (vqlatent::tensor::euclidean(cb.entry(j), m), j))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        used[j] = true;
        worst = worst.max(dist);
    }
    worst
}
