//! The discrete latent space: nearest-neighbour quantisation, the
//! straight-through composite, the three-term objective, EMA re-estimation
//! of the entries and Gumbel-max selection.

use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{contract, Result, VqlError};
use crate::scalar::{c, Scalar};
use crate::tensor::{squared_distance, Tensor};

/// Counts below this mark an entry as dead; it is then reseeded.
pub const DEAD_COUNT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Kmeans,
    Gumbel,
}

/// How squared residuals are reduced in the latent terms of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Squared Euclidean norm over the whole `[L×I]` block.
    Sum,
    /// Squared norm per token, averaged over the `L` tokens.
    MeanTokens,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub scheme: Scheme,
    /// Number of codebook entries `K`.
    pub codebook_size: usize,
    /// Commitment weight; must stay below 1.
    pub beta: f64,
    /// Gumbel temperature.
    pub tau: f64,
    /// EMA decay λ of the codebook accumulators.
    pub decay: f64,
    /// Re-estimate entries by EMA instead of by gradient.
    pub ema: bool,
    /// Keep the codebook term `||sg[E(x)] - z_q||²` even when EMA is on.
    pub codebook_loss: bool,
    pub reduction: Reduction,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Kmeans,
            codebook_size: 512,
            beta: 0.25,
            tau: 1.0,
            decay: 0.99,
            ema: true,
            codebook_loss: false,
            reduction: Reduction::MeanTokens,
        }
    }
}

impl QuantizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.codebook_size == 0 {
            return Err(contract("codebook must have at least one entry"));
        }
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return Err(contract(format!("commitment weight must be in [0, 1), got {}", self.beta)));
        }
        if !(self.tau > 0.0) {
            return Err(contract(format!("temperature must be positive, got {}", self.tau)));
        }
        if !(self.decay >= 0.0 && self.decay < 1.0) {
            return Err(contract(format!("EMA decay must be in [0, 1), got {}", self.decay)));
        }
        Ok(())
    }
}

/// KL divergence between a one-hot posterior and the uniform prior over
/// `k` entries, which is the constant `ln k`.
pub fn kl_uniform_prior(k: usize) -> f64 {
    (k as f64).ln()
}

/// Result of quantising a block of embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantized<T> {
    pub indices: Vec<usize>,
    pub vectors: Tensor<T>,
}

/// Latent token table `z ∈ R^{K×I}` with its EMA accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T> {
    entries: Tensor<T>,
    counts: Vec<T>,
    sums: Tensor<T>,
}

impl<T: Scalar> Codebook<T> {
    /// Wraps a `[K×I]` table. Each entry starts with unit count.
    pub fn new(entries: Tensor<T>) -> Result<Self> {
        if entries.shape().len() != 2 {
            return Err(contract(format!("codebook must be [K×I], got {:?}", entries.shape())));
        }
        let k = entries.rows();
        Ok(Self {
            sums: entries.clone(),
            counts: vec![T::one(); k],
            entries,
        })
    }

    /// Rebuilds a codebook from persisted parts.
    pub fn from_parts(entries: Tensor<T>, counts: Vec<T>, sums: Tensor<T>) -> Result<Self> {
        if entries.shape().len() != 2 || sums.shape() != entries.shape() || counts.len() != entries.rows() {
            return Err(VqlError::Shape {
                op: "codebook",
                left: entries.shape().to_vec(),
                right: sums.shape().to_vec(),
            });
        }
        Ok(Self { entries, counts, sums })
    }

    /// k-means++ style seeding: the first entry is a uniform draw from
    /// `pool`, each further one is drawn with probability proportional to
    /// its squared distance from the entries chosen so far.
    pub fn seed_from<R: Rng + ?Sized>(pool: &Tensor<T>, k: usize, rng: &mut R) -> Result<Self> {
        let n = pool.rows();
        if n == 0 || k == 0 {
            return Err(contract("cannot seed a codebook from an empty pool"));
        }
        let mut chosen = vec![rng.random_range(0..n)];
        let mut d2: Vec<f64> = (0..n)
            .map(|i| squared_distance(pool.row(i), pool.row(chosen[0])).as_f64())
            .collect();
        while chosen.len() < k {
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if u < w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            chosen.push(pick);
            for (i, d) in d2.iter_mut().enumerate() {
                *d = d.min(squared_distance(pool.row(i), pool.row(pick)).as_f64());
            }
        }
        let rows: Vec<Vec<T>> = chosen.iter().map(|&i| pool.row(i).to_vec()).collect();
        Self::new(Tensor::from_rows(&rows)?)
    }

    pub fn size(&self) -> usize {
        self.entries.rows()
    }

    pub fn dim(&self) -> usize {
        self.entries.cols()
    }

    pub fn entries(&self) -> &Tensor<T> {
        &self.entries
    }

    pub fn entry(&self, k: usize) -> &[T] {
        self.entries.row(k)
    }

    pub fn counts(&self) -> &[T] {
        &self.counts
    }

    pub fn sums(&self) -> &Tensor<T> {
        &self.sums
    }

    /// Mutable table, for gradient-trained codebooks. Keeps the
    /// accumulators consistent with the new entries.
    pub fn set_entries(&mut self, entries: Tensor<T>) -> Result<()> {
        if entries.shape() != self.entries.shape() {
            return Err(VqlError::Shape {
                op: "set_entries",
                left: self.entries.shape().to_vec(),
                right: entries.shape().to_vec(),
            });
        }
        let mut sums = entries.clone();
        for k in 0..entries.rows() {
            let n = self.counts[k];
            for v in sums.row_mut(k) {
                *v = *v * n;
            }
        }
        self.entries = entries;
        self.sums = sums;
        Ok(())
    }

    /// Index of the nearest entry, lowest index on ties.
    pub fn nearest(&self, v: &[T]) -> usize {
        let mut best = 0;
        let mut best_d = T::infinity();
        for k in 0..self.size() {
            let d = squared_distance(v, self.entries.row(k));
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// The `n` nearest entries ordered by distance, then index.
    pub fn nearest_n(&self, v: &[T], n: usize) -> Vec<usize> {
        let mut scored: Vec<(T, usize)> = (0..self.size())
            .map(|k| (squared_distance(v, self.entries.row(k)), k))
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
        scored.into_iter().take(n).map(|(_, k)| k).collect()
    }

    /// Gathers entries into an `[indices.len()×I]` block.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let rows: Vec<Vec<T>> = indices.iter().map(|&k| self.entry(k).to_vec()).collect();
        Tensor::from_rows(&rows)
    }

    /// Nearest-neighbour quantisation of every row of `embeddings`.
    pub fn quantize(&self, embeddings: &Tensor<T>) -> Result<Quantized<T>> {
        if self.size() == 0 {
            return Err(contract("empty codebook"));
        }
        if embeddings.cols() != self.dim() {
            return Err(VqlError::Shape {
                op: "quantize",
                left: embeddings.shape().to_vec(),
                right: self.entries.shape().to_vec(),
            });
        }
        let indices: Vec<usize> = (0..embeddings.rows()).map(|i| self.nearest(embeddings.row(i))).collect();
        let vectors = self.gather(&indices)?;
        Ok(Quantized { indices, vectors })
    }

    /// One EMA step from embeddings with their assigned indices:
    /// `N ← λN + (1-λ)n`, `m ← λm + (1-λ)Σ E`, `z = m / N`.
    ///
    /// Entries whose count drops below [`DEAD_COUNT`] are reseeded to a
    /// random batch embedding; their indices are returned.
    pub fn ema_update<R: Rng + ?Sized>(
        &mut self,
        embeddings: &Tensor<T>,
        assignments: &[usize],
        decay: f64,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if embeddings.rows() != assignments.len() || embeddings.cols() != self.dim() {
            return Err(VqlError::Shape {
                op: "ema_update",
                left: embeddings.shape().to_vec(),
                right: vec![assignments.len(), self.dim()],
            });
        }
        let (k, d) = (self.size(), self.dim());
        let mut n = vec![T::zero(); k];
        let mut s = vec![T::zero(); k * d];
        for (i, &a) in assignments.iter().enumerate() {
            if a >= k {
                return Err(contract(format!("assignment {a} out of range for {k} entries")));
            }
            n[a] = n[a] + T::one();
            for (acc, &v) in s[a * d..(a + 1) * d].iter_mut().zip(embeddings.row(i)) {
                *acc = *acc + v;
            }
        }
        let lambda: T = c(decay);
        let rest = T::one() - lambda;
        let mut dead = Vec::new();
        for j in 0..k {
            self.counts[j] = self.counts[j] * lambda + n[j] * rest;
            let count = self.counts[j];
            let live = count >= c(DEAD_COUNT);
            for q in 0..d {
                let m = self.sums.row(j)[q] * lambda + s[j * d + q] * rest;
                self.sums.row_mut(j)[q] = m;
                if live {
                    self.entries.row_mut(j)[q] = m / count;
                }
            }
            if !live {
                dead.push(j);
            }
        }
        for &j in &dead {
            let pick = embeddings.row(rng.random_range(0..embeddings.rows())).to_vec();
            self.entries.row_mut(j).copy_from_slice(&pick);
            self.sums.row_mut(j).copy_from_slice(&pick);
            self.counts[j] = T::one();
        }
        Ok(dead)
    }
}

/// Argmax of `softmax((log t + g) / τ)`. The softmax and the positive
/// scaling are monotone, so the argmax is taken on `log t + g` directly and
/// is exactly invariant to `τ`. Lowest index wins ties.
pub fn gumbel_argmax<T: Scalar>(log_t: &[T], noise: &[T], tau: T) -> Result<usize> {
    if !(tau > T::zero()) {
        return Err(contract(format!("temperature must be positive, got {tau}")));
    }
    let mut best = 0;
    let mut best_v = T::neg_infinity();
    for (k, (&l, &g)) in log_t.iter().zip(noise).enumerate() {
        let v = l + g;
        if v > best_v {
            best_v = v;
            best = k;
        }
    }
    Ok(best)
}

/// Relaxed selection probabilities `softmax((log t + g) / τ)`.
pub fn gumbel_probs<T: Scalar>(log_t: &[T], noise: &[T], tau: T) -> Vec<T> {
    let scores: Vec<T> = log_t.iter().zip(noise).map(|(&l, &g)| (l + g) / tau).collect();
    Tensor::new(vec![scores.len()], scores)
        .expect("nonempty scores")
        .softmax_rows()
        .into_data()
}

pub fn sample_gumbel<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    let g = Gumbel::new(0.0, 1.0).expect("standard Gumbel");
    (0..n).map(|_| c(g.sample(rng))).collect()
}

/// Gumbel-max quantisation of positive scores `t[L×K]`.
pub fn quantize_gumbel<T: Scalar, R: Rng + ?Sized>(
    t: &Tensor<T>,
    codebook: &Codebook<T>,
    tau: T,
    rng: &mut R,
) -> Result<Quantized<T>> {
    if !(tau > T::zero()) {
        return Err(contract(format!("temperature must be positive, got {tau}")));
    }
    if t.cols() != codebook.size() {
        return Err(VqlError::Shape {
            op: "quantize_gumbel",
            left: t.shape().to_vec(),
            right: codebook.entries().shape().to_vec(),
        });
    }
    if t.data().iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
        return Err(contract("Gumbel scores must be positive and finite"));
    }
    let mut indices = Vec::with_capacity(t.rows());
    for i in 0..t.rows() {
        let log_t: Vec<T> = t.row(i).iter().map(|v| v.ln()).collect();
        let noise = sample_gumbel(log_t.len(), rng);
        indices.push(gumbel_argmax(&log_t, &noise, tau)?);
    }
    let vectors = codebook.gather(&indices)?;
    Ok(Quantized { indices, vectors })
}

/// Straight-through composite `E + sg[z_q - E]`: forward equals `z_q`,
/// the Jacobian with respect to `E` is the identity.
pub fn straight_through<T: Scalar>(tape: &mut Tape<T>, encoded: Var, quantized: Var) -> Result<Var> {
    tape.straight_through(encoded, quantized)
}

/// Hard Gumbel selection with a straight-through relaxed gradient:
/// `one_hot + y_soft - sg[y_soft]`, projected onto the codebook table.
/// Returns the selected latents `[L×I]` and the hard indices.
pub fn gumbel_straight_through<T: Scalar>(
    tape: &mut Tape<T>,
    log_t: Var,
    table: Var,
    tau: T,
    noise: &Tensor<T>,
) -> Result<(Var, Vec<usize>)> {
    if !(tau > T::zero()) {
        return Err(contract(format!("temperature must be positive, got {tau}")));
    }
    let g = tape.constant(noise.clone());
    let perturbed = tape.add(log_t, g)?;
    let scaled = tape.scale(perturbed, T::one() / tau);
    let soft = tape.softmax(scaled);
    let scores = tape.value(perturbed).clone();
    let k = scores.cols();
    let mut hard = Tensor::zeros(scores.shape());
    let mut indices = Vec::with_capacity(scores.rows());
    for i in 0..scores.rows() {
        let idx = gumbel_argmax(scores.row(i), &vec![T::zero(); k], T::one())?;
        hard.row_mut(i)[idx] = T::one();
        indices.push(idx);
    }
    let hard = tape.constant(hard);
    let detached = tape.stop_gradient(soft);
    let zero = tape.sub(soft, detached)?;
    let y = tape.add(hard, zero)?;
    Ok((tape.matmul(y, table)?, indices))
}

/// `CE + ||sg[E] - z_q||² + β ||E - sg[z_q]||²`. The codebook term is left
/// out when EMA re-estimates the entries unless `codebook_loss` is set.
pub fn vq_loss<T: Scalar>(
    tape: &mut Tape<T>,
    encoded: Var,
    quantized: Var,
    reconstruction: Var,
    cfg: &QuantizerConfig,
) -> Result<VqTerms> {
    let rows = tape.value(encoded).rows();
    let norm: T = match cfg.reduction {
        Reduction::Sum => T::one(),
        Reduction::MeanTokens => T::one() / T::of_usize(rows),
    };
    let sg_q = tape.stop_gradient(quantized);
    let commit_sq = tape.squared_error(encoded, sg_q)?;
    let commit = tape.scale(commit_sq, norm);
    let weighted = tape.scale(commit, c(cfg.beta));
    let mut loss = tape.add(reconstruction, weighted)?;
    let mut codebook_term = None;
    if !cfg.ema || cfg.codebook_loss {
        let sg_e = tape.stop_gradient(encoded);
        let cb_sq = tape.squared_error(sg_e, quantized)?;
        let cb = tape.scale(cb_sq, norm);
        loss = tape.add(loss, cb)?;
        codebook_term = Some(cb);
    }
    Ok(VqTerms {
        loss,
        commitment: commit,
        codebook: codebook_term,
    })
}

/// Handles to the pieces of the objective.
#[derive(Clone, Copy, Debug)]
pub struct VqTerms {
    pub loss: Var,
    /// Unweighted `||E - sg[z_q]||²` (after reduction).
    pub commitment: Var,
    pub codebook: Option<Var>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn book(rows: &[Vec<f64>]) -> Codebook<f64> {
        Codebook::new(Tensor::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn nearest_of_two() {
        let cb = book(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        let q = cb.quantize(&Tensor::from_rows(&[vec![0.9, 0.8]]).unwrap()).unwrap();
        assert_eq!(q.indices, vec![1]);
    }

    #[test]
    fn exact_hit_returns_entry() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, -(i as f64), 0.5]).collect();
        let cb = book(&rows);
        let q = cb.quantize(&Tensor::from_rows(&[rows[3].clone()]).unwrap()).unwrap();
        assert_eq!(q.indices, vec![3]);
        assert_eq!(q.vectors.row(0), rows[3].as_slice());
    }

    #[test]
    fn ties_pick_lowest_index() {
        let cb = book(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(cb.nearest(&[0.0, 0.0]), 0);
        assert_eq!(cb.nearest(&[1.0, 0.0]), 0);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let cb = book(&[vec![0.0, 0.0]]);
        let err = cb.quantize(&Tensor::zeros(&[1, 3])).unwrap_err();
        assert!(matches!(err, VqlError::Shape { .. }));
    }

    #[test]
    fn kl_constant_for_ten_thousand() {
        assert!((kl_uniform_prior(10_000) - 9.2103).abs() < 1e-4);
    }

    #[test]
    fn ema_with_zero_decay_is_batch_mean() {
        let mut cb = book(&[vec![5.0, 5.0], vec![-3.0, 0.0]]);
        let emb = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        cb.ema_update(&emb, &[0, 0], 0.0, &mut rng).unwrap();
        assert_eq!(cb.counts()[0], 2.0);
        assert_eq!(cb.sums().row(0), &[2.0, 2.0]);
        assert_eq!(cb.entry(0), &[1.0, 1.0]);
    }

    #[test]
    fn ema_single_step_matches_hand_evaluation() {
        let entries = Tensor::<f64>::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let sums = Tensor::from_rows(&[vec![10.0, 0.0]]).unwrap();
        let mut cb = Codebook::from_parts(entries, vec![10.0], sums).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        cb.ema_update(&emb, &[0], 0.99, &mut rng).unwrap();
        // hand-rolled: N = 10*0.99 + 1*0.01, m = [10*0.99 + 0.01, 0.01]
        let n = 10.0 * 0.99 + 0.01;
        let m = [10.0 * 0.99 + 0.01, 0.01];
        assert!((cb.counts()[0] - 9.91).abs() < 1e-12);
        assert!((cb.sums().row(0)[0] - 9.91).abs() < 1e-12);
        assert!((cb.sums().row(0)[1] - 0.01).abs() < 1e-12);
        assert!((cb.entry(0)[0] - m[0] / n).abs() < 1e-12);
        assert!((cb.entry(0)[1] - m[1] / n).abs() < 1e-12);
    }

    #[test]
    fn unassigned_entries_decay_but_keep_ratio() {
        let mut cb = book(&[vec![1.0, 2.0], vec![0.0, 0.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = Tensor::from_rows(&[vec![0.1, 0.1]]).unwrap();
        cb.ema_update(&emb, &[1], 0.9, &mut rng).unwrap();
        assert!((cb.counts()[0] - 0.9).abs() < 1e-12);
        for q in 0..2 {
            assert!((cb.entry(0)[q] - cb.sums().row(0)[q] / cb.counts()[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn dead_entries_are_reseeded_from_batch() {
        let entries = Tensor::from_rows(&[vec![9.0, 9.0], vec![0.0, 0.0]]).unwrap();
        let sums = Tensor::from_rows(&[vec![0.0099, 0.0099], vec![0.0, 0.0]]).unwrap();
        let mut cb = Codebook::from_parts(entries, vec![0.0011, 1.0], sums).unwrap();
        let emb = Tensor::from_rows(&[vec![0.5, 0.25]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dead = cb.ema_update(&emb, &[1], 0.5, &mut rng).unwrap();
        assert_eq!(dead, vec![0]);
        assert_eq!(cb.entry(0), &[0.5, 0.25]);
    }

    #[test]
    fn gumbel_argmax_is_temperature_invariant() {
        let log_t = [0.1f64.ln(), 0.5f64.ln(), 0.4f64.ln()];
        let noise = [0.7, -0.2, 0.1];
        let a = gumbel_argmax(&log_t, &noise, 0.5).unwrap();
        let b = gumbel_argmax(&log_t, &noise, 2.0).unwrap();
        assert_eq!(a, b);
        let shifted: Vec<f64> = log_t.iter().map(|v| v + 3.0).collect();
        assert_eq!(gumbel_argmax(&shifted, &noise, 1.0).unwrap(), a);
    }

    #[test]
    fn gumbel_rejects_non_positive_temperature() {
        assert!(gumbel_argmax(&[0.0f64], &[0.0], 0.0).is_err());
        let cb = book(&[vec![0.0], vec![1.0]]);
        let t = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(quantize_gumbel(&t, &cb, -1.0, &mut rng).is_err());
    }

    #[test]
    fn zero_residual_loss_is_reconstruction() {
        let mut tape = Tape::<f64>::new();
        let e = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap(), true);
        let q = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let ce = tape.constant(Tensor::scalar(0.7));
        let cfg = QuantizerConfig {
            ema: false,
            ..QuantizerConfig::default()
        };
        let terms = vq_loss(&mut tape, e, q, ce, &cfg).unwrap();
        assert_eq!(tape.value(terms.loss).data(), &[0.7]);
    }

    #[test]
    fn loss_arithmetic_with_ema() {
        let mut tape = Tape::<f64>::new();
        // ||E - z_q||² = 4
        let e = tape.leaf(Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap(), true);
        let q = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let ce = tape.constant(Tensor::scalar(1.0));
        let cfg = QuantizerConfig {
            reduction: Reduction::Sum,
            ..QuantizerConfig::default()
        };
        let terms = vq_loss(&mut tape, e, q, ce, &cfg).unwrap();
        assert_eq!(tape.value(terms.loss).data(), &[2.0]);
    }

    #[test]
    fn config_validation() {
        assert!(QuantizerConfig::default().validate().is_ok());
        let bad = QuantizerConfig {
            beta: 1.0,
            ..QuantizerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = QuantizerConfig {
            tau: 0.0,
            ..QuantizerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
