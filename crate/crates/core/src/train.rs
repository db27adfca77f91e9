//! Mini-batch training of the autoencoder.
//!
//! Each batch builds one tape: encode, quantise, straight-through, decode
//! under teacher forcing, then the objective. With the k-means scheme and
//! EMA on, the codebook is re-estimated from the batch after the optimiser
//! step; otherwise it is a leaf trained by its own Adam state.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::autoencoder::VqAutoencoder;
use crate::codebook::{gumbel_straight_through, sample_gumbel, straight_through, vq_loss, Codebook, QuantizerConfig, Scheme};
use crate::error::{contract, Result};
use crate::model::{argmax, ModelConfig, Seq2Seq, Train};
use crate::params::{Adam, AdamConfig, ParamSet};
use crate::scalar::{c, Scalar};
use crate::tensor::Tensor;
use crate::vocab::{Vocabulary, END, START};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
        }
    }
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub ce: f64,
    pub commit: f64,
    pub token_acc: f64,
}

pub const LOSS_LOG_HEADER: &str = "epoch,ce,commit,token_acc";

impl EpochStats {
    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6},{:.6}", self.epoch, self.ce, self.commit, self.token_acc)
    }
}

/// Fresh model plus a codebook seeded from the initial encoder outputs of
/// one pass over `data` (k-means++ draws).
pub fn initialise<T: Scalar>(
    model_cfg: ModelConfig,
    quantizer: QuantizerConfig,
    vocab: Vocabulary,
    data: &[Vec<usize>],
    seed: u64,
) -> Result<VqAutoencoder<T>> {
    quantizer.validate()?;
    if data.is_empty() {
        return Err(contract("training data is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Seq2Seq::new(model_cfg, &mut rng)?;
    let mut rows: Vec<Vec<T>> = Vec::new();
    for words in data {
        let mut ids = words.clone();
        ids.push(END);
        rows.extend(model.encode(&ids)?.to_rows());
    }
    let pool = Tensor::from_rows(&rows)?;
    let codebook = Codebook::seed_from(&pool, quantizer.codebook_size, &mut rng)?;
    Ok(VqAutoencoder {
        model,
        codebook,
        quantizer,
        vocab,
    })
}

struct Batch<T> {
    embeddings: Vec<Vec<T>>,
    assignments: Vec<usize>,
    ce: f64,
    commit: f64,
    correct: usize,
    tokens: usize,
}

pub struct Trainer<T> {
    pub config: TrainConfig,
    adam: Adam<T>,
    /// Gradient-trained codebook, used unless the scheme is k-means with EMA.
    table: Option<(ParamSet<T>, Adam<T>)>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(ae: &VqAutoencoder<T>, config: TrainConfig, seed: u64) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(contract("batch size must be positive"));
        }
        let q = &ae.quantizer;
        let table = if q.scheme == Scheme::Gumbel || !q.ema {
            let mut ps = ParamSet::new();
            ps.push("codebook.z", ae.codebook.entries().clone());
            let adam = Adam::new(config.adam, &ps);
            Some((ps, adam))
        } else {
            None
        };
        Ok(Self {
            config,
            adam: Adam::new(config.adam, ae.model.params()),
            table,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7261_696e),
        })
    }

    /// Runs the configured number of epochs, reporting after each.
    pub fn fit(
        &mut self,
        ae: &mut VqAutoencoder<T>,
        data: &[Vec<usize>],
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<Vec<EpochStats>> {
        let mut log = Vec::with_capacity(self.config.epochs);
        for epoch in 1..=self.config.epochs {
            let stats = self.epoch(ae, data, epoch)?;
            on_epoch(&stats);
            log.push(stats);
        }
        Ok(log)
    }

    pub fn epoch(&mut self, ae: &mut VqAutoencoder<T>, data: &[Vec<usize>], epoch: usize) -> Result<EpochStats> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut ce, mut commit, mut correct, mut tokens) = (0.0, 0.0, 0usize, 0usize);
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let items: Vec<&[usize]> = chunk.iter().map(|&i| data[i].as_slice()).collect();
            let b = self.step(ae, &items)?;
            ce += b.ce;
            commit += b.commit;
            correct += b.correct;
            tokens += b.tokens;
            batches += 1;
        }
        Ok(EpochStats {
            epoch,
            ce: ce / batches.max(1) as f64,
            commit: commit / batches.max(1) as f64,
            token_acc: correct as f64 / tokens.max(1) as f64,
        })
    }

    fn step(&mut self, ae: &mut VqAutoencoder<T>, items: &[&[usize]]) -> Result<Batch<T>> {
        let mut tape = Tape::new();
        let pv = ae.model.params().register(&mut tape, true);
        let table = self.table.as_ref().map(|(ps, _)| ps.register(&mut tape, true)[0]);
        let q = ae.quantizer;
        let rate = ae.model.config().dropout;
        let mut batch = Batch {
            embeddings: Vec::new(),
            assignments: Vec::new(),
            ce: 0.0,
            commit: 0.0,
            correct: 0,
            tokens: 0,
        };
        let mut losses: Vec<Var> = Vec::with_capacity(items.len());
        for words in items {
            let mut enc_ids = words.to_vec();
            enc_ids.push(END);
            let mut dec_in = vec![START];
            dec_in.extend_from_slice(words);
            let mut train = Train {
                rng: &mut self.rng,
                rate,
            };
            let e = ae.model.encode_on(&mut tape, &pv, &enc_ids, Some(&mut train))?;
            let (zq, quantized, indices) = match (q.scheme, table) {
                (Scheme::Gumbel, Some(tab)) => {
                    let tab_t = tape.transpose(tab)?;
                    let log_t = tape.matmul(e, tab_t)?;
                    let noise = Tensor::new(
                        vec![enc_ids.len(), q.codebook_size],
                        sample_gumbel(enc_ids.len() * q.codebook_size, &mut self.rng),
                    )?;
                    let (zq, idx) = gumbel_straight_through(&mut tape, log_t, tab, c(q.tau), &noise)?;
                    let quantized = tape.embedding(tab, &idx)?;
                    (zq, quantized, idx)
                }
                _ => {
                    let hit = ae.codebook.quantize(tape.value(e))?;
                    let quantized = match table {
                        Some(tab) => tape.embedding(tab, &hit.indices)?,
                        None => tape.constant(hit.vectors),
                    };
                    (straight_through(&mut tape, e, quantized)?, quantized, hit.indices)
                }
            };
            let mut train = Train {
                rng: &mut self.rng,
                rate,
            };
            let logits = ae.model.decode_on(&mut tape, &pv, zq, &dec_in, Some(&mut train))?;
            let ce = tape.cross_entropy(logits, &enc_ids)?;
            let terms = vq_loss(&mut tape, e, quantized, ce, &q)?;
            losses.push(terms.loss);

            let lv = tape.value(logits);
            batch.correct += (0..lv.rows()).filter(|&r| argmax(lv.row(r)) == enc_ids[r]).count();
            batch.tokens += enc_ids.len();
            batch.ce += tape.value(ce).data()[0].as_f64();
            batch.commit += tape.value(terms.commitment).data()[0].as_f64();
            batch.embeddings.extend(tape.value(e).to_rows());
            batch.assignments.extend(indices);
        }
        let n = items.len();
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = tape.add(total, l)?;
        }
        let total = tape.scale(total, T::one() / T::of_usize(n));
        tape.backward(total)?;
        self.adam.step(ae.model.params_mut(), &tape, &pv);
        if let (Some((ps, adam)), Some(tab)) = (self.table.as_mut(), table) {
            adam.step(ps, &tape, &[tab]);
            ae.codebook.set_entries(ps.get(0).clone())?;
        } else {
            let emb = Tensor::from_rows(&batch.embeddings)?;
            ae.codebook.ema_update(&emb, &batch.assignments, q.decay, &mut self.rng)?;
        }
        batch.ce /= n as f64;
        batch.commit /= n as f64;
        Ok(batch)
    }
}

/// Teacher-forced token accuracy and exact-match rate of greedy
/// reconstructions over `data`.
pub fn reconstruction_accuracy<T: Scalar>(ae: &VqAutoencoder<T>, data: &[Vec<usize>]) -> Result<(f64, f64)> {
    let (mut correct, mut total, mut exact) = (0usize, 0usize, 0usize);
    for words in data {
        let out = ae.reconstruct(words)?;
        if &out == words {
            exact += 1;
        }
        let target = ae.encoder_ids(words);
        let mut prefix = vec![START];
        prefix.extend_from_slice(words);
        let logits = ae.model.decode(&ae.quantize(words)?.vectors, &prefix)?;
        correct += (0..logits.rows())
            .filter(|&r| argmax(logits.row(r)) == target[r])
            .count();
        total += target.len();
    }
    let n = data.len().max(1) as f64;
    Ok((correct as f64 / total.max(1) as f64, exact as f64 / n))
}
