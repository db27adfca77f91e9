//! Encoder/decoder transformer whose decoder cross-attention reads the
//! quantised latent tokens as keys and values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{contract, input, Result, VqlError};
use crate::params::ParamSet;
use crate::scalar::{c, Scalar};
use crate::tensor::Tensor;
use crate::vocab::{END, START};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Width of every hidden state and of each codebook entry.
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 300,
            d_model: 64,
            n_heads: 4,
            n_layers_enc: 2,
            n_layers_dec: 2,
            d_ff: 256,
            max_len: 32,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(contract(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= END || self.max_len < 3 || self.d_ff == 0 {
            return Err(contract("vocab_size, max_len and d_ff are too small"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(contract(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Relative offsets `j - p` are clamped to `±max_len`.
    fn rel_buckets(&self) -> usize {
        2 * self.max_len + 1
    }
}

#[derive(Clone, Debug)]
struct AttnIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

#[derive(Clone, Debug)]
struct NormIdx {
    gain: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct FfIdx {
    w1: usize,
    w2: usize,
}

#[derive(Clone, Debug)]
struct EncLayer {
    ln1: NormIdx,
    attn: AttnIdx,
    ln2: NormIdx,
    ff: FfIdx,
}

#[derive(Clone, Debug)]
struct DecLayer {
    ln1: NormIdx,
    self_attn: AttnIdx,
    ln2: NormIdx,
    cross: AttnIdx,
    ln3: NormIdx,
    ff: FfIdx,
}

#[derive(Clone, Debug)]
struct Layout {
    embed: usize,
    enc: Vec<EncLayer>,
    enc_ln: NormIdx,
    dec: Vec<DecLayer>,
    dec_ln: NormIdx,
    rel_bias: usize,
    out_w: usize,
    out_b: usize,
}

/// Sequence autoencoder parameters plus the fixed layout that names them.
#[derive(Clone, Debug)]
pub struct Seq2Seq<T> {
    config: ModelConfig,
    params: ParamSet<T>,
    layout: Layout,
}

/// Placeholder RNG type for eval-mode passes.
pub type NoRng = rand_chacha::ChaCha8Rng;

/// Dropout source for training-mode forward passes.
pub struct Train<'a, R: Rng + ?Sized> {
    pub rng: &'a mut R,
    pub rate: f64,
}

impl<T: Scalar> Seq2Seq<T> {
    /// Freshly initialised parameters.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new();
        let layout = build_layout(&config, &mut ps, &mut |shape: &[usize], kind: Init| match kind {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, T::one()),
            Init::Normal(std) => Tensor::randn(shape, std, rng),
        });
        Ok(Self {
            config,
            params: ps,
            layout,
        })
    }

    /// Rebuilds a model from named tensors (e.g. a checkpoint).
    pub fn from_named(config: ModelConfig, named: &[(String, Tensor<T>)]) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new();
        let layout = build_layout(&config, &mut ps, &mut |shape: &[usize], _| Tensor::zeros(shape));
        for i in 0..ps.len() {
            let (_, t) = named
                .iter()
                .find(|(n, _)| n == ps.name(i))
                .ok_or_else(|| VqlError::Format(format!("missing parameter {}", ps.name(i))))?;
            if t.shape() != ps.get(i).shape() {
                return Err(VqlError::Shape {
                    op: "load parameter",
                    left: ps.get(i).shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            *ps.get_mut(i) = t.clone();
        }
        Ok(Self {
            config,
            params: ps,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn check_ids(&self, ids: &[usize], what: &str) -> Result<()> {
        if ids.is_empty() {
            return Err(input(format!("empty {what} sequence")));
        }
        if ids.len() > self.config.max_len {
            return Err(input(format!(
                "{what} length {} exceeds max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(input(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Continuous encoder output `E(x)`, one row per input token.
    pub fn encode(&self, ids: &[usize]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let pv = self.params.register(&mut tape, false);
        let e = self.encode_on::<NoRng>(&mut tape, &pv, ids, None)?;
        Ok(tape.value(e).clone())
    }

    /// Next-token logits `[prefix.len()×vocab]` under teacher forcing.
    pub fn decode(&self, latents: &Tensor<T>, prefix: &[usize]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let pv = self.params.register(&mut tape, false);
        let z = tape.constant(latents.clone());
        let out = self.decode_on::<NoRng>(&mut tape, &pv, z, prefix, None)?;
        Ok(tape.value(out).clone())
    }

    /// Greedy decoding from the start token until the end token or
    /// `max_len` emitted tokens. The end token is not returned.
    pub fn greedy_generate(&self, latents: &Tensor<T>, max_len: usize) -> Result<Vec<usize>> {
        let mut prefix = vec![START];
        let mut out = Vec::new();
        let limit = max_len.min(self.config.max_len - 1);
        while out.len() < limit {
            let logits = self.decode(latents, &prefix)?;
            let last = logits.row(logits.rows() - 1);
            let next = argmax(last);
            if next == END {
                break;
            }
            out.push(next);
            prefix.push(next);
        }
        Ok(out)
    }

    pub fn encode_on<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        pv: &[Var],
        ids: &[usize],
        mut train: Option<&mut Train<'_, R>>,
    ) -> Result<Var> {
        self.check_ids(ids, "encoder")?;
        let lay = &self.layout;
        let mut x = self.embed(tape, pv, ids)?;
        for layer in &lay.enc {
            let h = norm(tape, pv, x, &layer.ln1)?;
            let a = self.attention(tape, pv, h, h, &layer.attn, None, None)?;
            let a = dropout(tape, a, train.as_deref_mut())?;
            x = tape.add(x, a)?;
            let h = norm(tape, pv, x, &layer.ln2)?;
            let f = feed_forward(tape, pv, h, &layer.ff)?;
            let f = dropout(tape, f, train.as_deref_mut())?;
            x = tape.add(x, f)?;
        }
        norm(tape, pv, x, &lay.enc_ln)
    }

    pub fn decode_on<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        pv: &[Var],
        latents: Var,
        prefix: &[usize],
        train: Option<&mut Train<'_, R>>,
    ) -> Result<Var> {
        self.check_ids(prefix, "decoder")?;
        let x = self.embed(tape, pv, prefix)?;
        self.decode_embedded_on(tape, pv, latents, x, train)
    }

    /// Decoder stack on already-embedded inputs `[L'×d]`.
    pub fn decode_embedded_on<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        pv: &[Var],
        latents: Var,
        inputs: Var,
        mut train: Option<&mut Train<'_, R>>,
    ) -> Result<Var> {
        let d = self.config.d_model;
        let zshape = tape.shape(latents).to_vec();
        if zshape.len() != 2 || zshape[1] != d {
            return Err(VqlError::Shape {
                op: "decode latents",
                left: zshape,
                right: vec![0, d],
            });
        }
        let lay = &self.layout;
        let (lq, lk) = (tape.value(inputs).rows(), zshape[0]);
        let mask = tape.constant(causal_mask(lq));
        let rel = self.relative_bias(tape, pv, lq, lk)?;
        let mut x = inputs;
        for layer in &lay.dec {
            let h = norm(tape, pv, x, &layer.ln1)?;
            let a = self.attention(tape, pv, h, h, &layer.self_attn, None, Some(mask))?;
            let a = dropout(tape, a, train.as_deref_mut())?;
            x = tape.add(x, a)?;
            let h = norm(tape, pv, x, &layer.ln2)?;
            let a = self.attention(tape, pv, h, latents, &layer.cross, Some(&rel), None)?;
            let a = dropout(tape, a, train.as_deref_mut())?;
            x = tape.add(x, a)?;
            let h = norm(tape, pv, x, &layer.ln3)?;
            let f = feed_forward(tape, pv, h, &layer.ff)?;
            let f = dropout(tape, f, train.as_deref_mut())?;
            x = tape.add(x, f)?;
        }
        let h = norm(tape, pv, x, &lay.dec_ln)?;
        let logits = tape.matmul(h, pv[lay.out_w])?;
        tape.add_row(logits, pv[lay.out_b])
    }

    /// Token embedding plus sinusoidal positions.
    fn embed(&self, tape: &mut Tape<T>, pv: &[Var], ids: &[usize]) -> Result<Var> {
        let e = tape.embedding(pv[self.layout.embed], ids)?;
        let pe = tape.constant(positional_encoding(ids.len(), self.config.d_model));
        tape.add(e, pe)
    }

    /// Per-head `[Lq×Lk]` biases indexed by the clamped offset `j - p`.
    fn relative_bias(&self, tape: &mut Tape<T>, pv: &[Var], lq: usize, lk: usize) -> Result<Vec<Var>> {
        let r = self.config.max_len as isize;
        let ids: Vec<usize> = (0..lq)
            .flat_map(|p| (0..lk).map(move |j| ((j as isize - p as isize).clamp(-r, r) + r) as usize))
            .collect();
        let table = tape.embedding(pv[self.layout.rel_bias], &ids)?;
        (0..self.config.n_heads)
            .map(|h| {
                let col = tape.slice_cols(table, h, 1)?;
                tape.reshape(col, &[lq, lk])
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        tape: &mut Tape<T>,
        pv: &[Var],
        query_in: Var,
        kv_in: Var,
        w: &AttnIdx,
        bias: Option<&[Var]>,
        mask: Option<Var>,
    ) -> Result<Var> {
        let dh = self.config.head_dim();
        let q = tape.matmul(query_in, pv[w.wq])?;
        let k = tape.matmul(kv_in, pv[w.wk])?;
        let v = tape.matmul(kv_in, pv[w.wv])?;
        let scale = T::one() / T::of_usize(dh).sqrt();
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let s = tape.matmul(qh, kt)?;
            let mut s = tape.scale(s, scale);
            if let Some(b) = bias {
                s = tape.add(s, b[h])?;
            }
            if let Some(m) = mask {
                s = tape.add(s, m)?;
            }
            let a = tape.softmax(s);
            heads.push(tape.matmul(a, vh)?);
        }
        let cat = tape.concat_cols(&heads)?;
        tape.matmul(cat, pv[w.wo])
    }
}

fn norm<T: Scalar>(tape: &mut Tape<T>, pv: &[Var], x: Var, n: &NormIdx) -> Result<Var> {
    tape.layer_norm(x, pv[n.gain], pv[n.bias])
}

fn feed_forward<T: Scalar>(tape: &mut Tape<T>, pv: &[Var], x: Var, ff: &FfIdx) -> Result<Var> {
    let h = tape.matmul(x, pv[ff.w1])?;
    let h = tape.gelu(h);
    tape.matmul(h, pv[ff.w2])
}

fn dropout<T: Scalar, R: Rng + ?Sized>(tape: &mut Tape<T>, x: Var, train: Option<&mut Train<'_, R>>) -> Result<Var> {
    let Some(train) = train else { return Ok(x) };
    if train.rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - train.rate;
    let shape = tape.shape(x).to_vec();
    let mut mask = Tensor::zeros(&shape);
    for m in mask.data_mut() {
        if train.rng.random::<f64>() < keep {
            *m = c(1.0 / keep);
        }
    }
    let mask = tape.constant(mask);
    tape.mul(x, mask)
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn causal_mask<T: Scalar>(n: usize) -> Tensor<T> {
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            m.row_mut(i)[j] = T::neg_infinity();
        }
    }
    m
}

/// Standard sinusoidal table `[len×d]`.
pub fn positional_encoding<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[len, d]);
    for p in 0..len {
        for i in 0..d {
            let freq = 10000f64.powf(-((2 * (i / 2)) as f64) / d as f64);
            let angle = p as f64 * freq;
            t.row_mut(p)[i] = c(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

struct Builder<'a, T> {
    ps: &'a mut ParamSet<T>,
    make: &'a mut dyn FnMut(&[usize], Init) -> Tensor<T>,
    d: usize,
    d_ff: usize,
}

impl<T: Scalar> Builder<'_, T> {
    fn param(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let t = (self.make)(shape, init);
        self.ps.push(name, t)
    }

    fn norm(&mut self, p: &str) -> NormIdx {
        let d = self.d;
        NormIdx {
            gain: self.param(format!("{p}.g"), &[d], Init::Ones),
            bias: self.param(format!("{p}.b"), &[d], Init::Zeros),
        }
    }

    fn attn(&mut self, p: &str) -> AttnIdx {
        let d = self.d;
        let std = 1.0 / (d as f64).sqrt();
        AttnIdx {
            wq: self.param(format!("{p}.wq"), &[d, d], Init::Normal(std)),
            wk: self.param(format!("{p}.wk"), &[d, d], Init::Normal(std)),
            wv: self.param(format!("{p}.wv"), &[d, d], Init::Normal(std)),
            wo: self.param(format!("{p}.wo"), &[d, d], Init::Normal(std)),
        }
    }

    fn ff(&mut self, p: &str) -> FfIdx {
        let (d, f) = (self.d, self.d_ff);
        FfIdx {
            w1: self.param(format!("{p}.w1"), &[d, f], Init::Normal(1.0 / (d as f64).sqrt())),
            w2: self.param(format!("{p}.w2"), &[f, d], Init::Normal(1.0 / (f as f64).sqrt())),
        }
    }
}

fn build_layout<T: Scalar>(
    cfg: &ModelConfig,
    ps: &mut ParamSet<T>,
    make: &mut dyn FnMut(&[usize], Init) -> Tensor<T>,
) -> Layout {
    let d = cfg.d_model;
    let mut b = Builder {
        ps,
        make,
        d,
        d_ff: cfg.d_ff,
    };
    let embed = b.param("embed.tokens".into(), &[cfg.vocab_size, d], Init::Normal(1.0));
    let enc = (0..cfg.n_layers_enc)
        .map(|l| EncLayer {
            ln1: b.norm(&format!("enc.{l}.ln1")),
            attn: b.attn(&format!("enc.{l}.attn")),
            ln2: b.norm(&format!("enc.{l}.ln2")),
            ff: b.ff(&format!("enc.{l}.ff")),
        })
        .collect();
    let enc_ln = b.norm("enc.ln");
    let dec = (0..cfg.n_layers_dec)
        .map(|l| DecLayer {
            ln1: b.norm(&format!("dec.{l}.ln1")),
            self_attn: b.attn(&format!("dec.{l}.self")),
            ln2: b.norm(&format!("dec.{l}.ln2")),
            cross: b.attn(&format!("dec.{l}.cross")),
            ln3: b.norm(&format!("dec.{l}.ln3")),
            ff: b.ff(&format!("dec.{l}.ff")),
        })
        .collect();
    let dec_ln = b.norm("dec.ln");
    let rel_bias = b.param("dec.rel_bias".into(), &[cfg.rel_buckets(), cfg.n_heads], Init::Zeros);
    let out_w = b.param("out.w".into(), &[d, cfg.vocab_size], Init::Normal(1.0 / (d as f64).sqrt()));
    let out_b = b.param("out.b".into(), &[cfg.vocab_size], Init::Zeros);
    Layout {
        embed,
        enc,
        enc_ln,
        dec,
        dec_ln,
        rel_bias,
        out_w,
        out_b,
    }
}
