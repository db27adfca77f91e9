//! Randomised gradient cases; each returns the worst relative error.

use rand::Rng;
use vqlatent::codebook::{straight_through, vq_loss};
use vqlatent::model::NoRng;
use vqlatent::{ModelConfig, QuantizerConfig, Reduction, Seq2Seq64, Tape64, Tensor64};

use super::{dim, gradcheck, randn, rng};

pub fn elementwise_binary(s: u64) -> f64 {
    let mut r = rng(s);
    let shape = [dim(&mut r, 1, 5), dim(&mut r, 1, 6)];
    let xs = [randn(&shape, &mut r), randn(&shape, &mut r)];
    let op = s % 3;
    gradcheck(&xs, s, |t, v| match op {
        0 => t.add(v[0], v[1]),
        1 => t.sub(v[0], v[1]),
        _ => t.mul(v[0], v[1]),
    })
}

pub fn add_row_and_scale(s: u64) -> f64 {
    let mut r = rng(100 + s);
    let (m, n) = (dim(&mut r, 1, 5), dim(&mut r, 1, 6));
    let k = r.random_range(-2.0..2.0);
    let xs = [randn(&[m, n], &mut r), randn(&[n], &mut r)];
    gradcheck(&xs, s, |t, v| {
        let y = t.add_row(v[0], v[1])?;
        Ok(t.scale(y, k))
    })
}

pub fn matmul_and_transpose(s: u64) -> f64 {
    let mut r = rng(200 + s);
    let (m, k, n) = (dim(&mut r, 1, 5), dim(&mut r, 1, 5), dim(&mut r, 1, 5));
    let xs = [randn(&[m, k], &mut r), randn(&[n, k], &mut r)];
    gradcheck(&xs, s, |t, v| {
        let bt = t.transpose(v[1])?;
        t.matmul(v[0], bt)
    })
}

pub fn softmax_rows(s: u64) -> f64 {
    let mut r = rng(300 + s);
    let shape = [dim(&mut r, 1, 4), dim(&mut r, 1, 7)];
    gradcheck(&[randn(&shape, &mut r)], s, |t, v| Ok(t.softmax(v[0])))
}

pub fn layer_norm(s: u64) -> f64 {
    let mut r = rng(400 + s);
    let (m, n) = (dim(&mut r, 1, 4), dim(&mut r, 2, 7));
    let xs = [randn(&[m, n], &mut r), randn(&[n], &mut r), randn(&[n], &mut r)];
    gradcheck(&xs, s, |t, v| t.layer_norm(v[0], v[1], v[2]))
}

pub fn gelu(s: u64) -> f64 {
    let mut r = rng(500 + s);
    let shape = [dim(&mut r, 1, 4), dim(&mut r, 1, 6)];
    gradcheck(&[randn(&shape, &mut r)], s, |t, v| Ok(t.gelu(v[0])))
}

pub fn embedding_lookup(s: u64) -> f64 {
    let mut r = rng(600 + s);
    let (rows, d, n) = (dim(&mut r, 1, 6), dim(&mut r, 1, 5), dim(&mut r, 1, 8));
    let ids: Vec<usize> = (0..n).map(|_| r.random_range(0..rows)).collect();
    gradcheck(&[randn(&[rows, d], &mut r)], s, |t, v| t.embedding(v[0], &ids))
}

pub fn cross_entropy(s: u64) -> f64 {
    let mut r = rng(700 + s);
    let (n, k) = (dim(&mut r, 1, 5), dim(&mut r, 2, 7));
    let targets: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
    gradcheck(&[randn(&[n, k], &mut r)], s, |t, v| t.cross_entropy(v[0], &targets))
}

pub fn reductions_and_squared_error(s: u64) -> f64 {
    let mut r = rng(800 + s);
    let shape = [dim(&mut r, 1, 4), dim(&mut r, 1, 5)];
    let xs = [randn(&shape, &mut r), randn(&shape, &mut r)];
    let op = s % 3;
    gradcheck(&xs, s, |t, v| match op {
        0 => Ok(t.sum(v[0])),
        1 => Ok(t.mean(v[1])),
        _ => t.squared_error(v[0], v[1]),
    })
}

pub fn slicing_concat_reshape(s: u64) -> f64 {
    let mut r = rng(900 + s);
    let (m, a, b) = (dim(&mut r, 1, 4), dim(&mut r, 1, 4), dim(&mut r, 1, 4));
    let xs = [randn(&[m, a], &mut r), randn(&[m, b], &mut r)];
    let start = r.random_range(0..a + b);
    let len = r.random_range(1..=a + b - start);
    gradcheck(&xs, s, |t, v| {
        let cat = t.concat_cols(&[v[0], v[1], v[0]])?;
        let sl = t.slice_cols(cat, start, len)?;
        t.reshape(sl, &[len, m])
    })
}

/// Exact forward equality and identity gradient; any mismatch is infinite.
pub fn straight_through_case(s: u64) -> f64 {
    let mut r = rng(1000 + s);
    let shape = [dim(&mut r, 1, 4), dim(&mut r, 1, 5)];
    let (e, q) = (randn(&shape, &mut r), randn(&shape, &mut r));
    let w = randn(&shape, &mut r);
    let mut t = Tape64::new();
    let (ev, qv) = (t.leaf(e, true), t.leaf(q.clone(), true));
    let st = straight_through(&mut t, ev, qv).unwrap();
    if t.value(st) != &q {
        return f64::INFINITY;
    }
    let wv = t.constant(w.clone());
    let p = t.mul(st, wv).unwrap();
    let loss = t.sum(p);
    t.backward(loss).unwrap();
    if t.grad(ev).unwrap() != w.data() {
        return f64::INFINITY;
    }
    // z_q only supplies the value
    t.grad(qv).map_or(0.0, |g| g.iter().fold(0.0, |m, x| m.max(x.abs())))
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / 1f64.max(y.abs())).fold(0.0, f64::max)
}

/// Analytic route: tape gradients through vq_loss with straight-through.
/// Numeric route: the decoder cost differentiated at z_q by finite
/// differences, plus the closed-form latent penalty gradients.
pub fn composed_vq_case(s: u64) -> f64 {
    let mut r = rng(1100 + s);
    let (l, d, vocab) = (dim(&mut r, 1, 4), dim(&mut r, 1, 4), dim(&mut r, 2, 5));
    let e = randn(&[l, d], &mut r);
    let q = randn(&[l, d], &mut r);
    let w = randn(&[d, vocab], &mut r);
    let targets: Vec<usize> = (0..l).map(|_| r.random_range(0..vocab)).collect();
    let reduction = if s % 2 == 0 { Reduction::Sum } else { Reduction::MeanTokens };
    let cfg = QuantizerConfig {
        beta: 0.25,
        ema: s % 4 < 2,
        codebook_loss: false,
        reduction,
        ..QuantizerConfig::default()
    };
    let mut t = Tape64::new();
    let (ev, qv, wv) = (t.leaf(e.clone(), true), t.leaf(q.clone(), true), t.leaf(w.clone(), true));
    let st = straight_through(&mut t, ev, qv).unwrap();
    let logits = t.matmul(st, wv).unwrap();
    let ce = t.cross_entropy(logits, &targets).unwrap();
    let terms = vq_loss(&mut t, ev, qv, ce, &cfg).unwrap();
    t.backward(terms.loss).unwrap();

    let ce_of = |z: &Tensor64, w: &Tensor64| {
        let mut t = Tape64::new();
        let (zv, wv) = (t.constant(z.clone()), t.constant(w.clone()));
        let logits = t.matmul(zv, wv).unwrap();
        let ce = t.cross_entropy(logits, &targets).unwrap();
        t.value(ce).data()[0]
    };
    let fd = |x: &Tensor64, f: &dyn Fn(&Tensor64) -> f64| -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let (mut up, mut down) = (x.clone(), x.clone());
                up.data_mut()[i] += 1e-5;
                down.data_mut()[i] -= 1e-5;
                (f(&up) - f(&down)) / 2e-5
            })
            .collect()
    };
    let dz = fd(&q, &|z| ce_of(z, &w));
    let dw = fd(&w, &|w| ce_of(&q, w));
    let norm = match reduction {
        Reduction::Sum => 1.0,
        Reduction::MeanTokens => 1.0 / l as f64,
    };
    let want_e: Vec<f64> = (0..e.len())
        .map(|i| dz[i] + cfg.beta * norm * 2.0 * (e.data()[i] - q.data()[i]))
        .collect();
    let want_q: Vec<f64> = (0..q.len())
        .map(|i| if cfg.ema { 0.0 } else { norm * 2.0 * (q.data()[i] - e.data()[i]) })
        .collect();
    let gq = t.grad(qv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; q.len()]);
    rel(t.grad(ev).unwrap(), &want_e).max(rel(t.grad(wv).unwrap(), &dw)).max(rel(&gq, &want_q))
}

fn tiny_model(seed: u64) -> Seq2Seq64 {
    let cfg = ModelConfig {
        vocab_size: 7,
        d_model: 4,
        n_heads: 2,
        n_layers_enc: 1,
        n_layers_dec: 1,
        d_ff: 6,
        max_len: 6,
        dropout: 0.0,
    };
    Seq2Seq64::new(cfg, &mut rng(seed)).unwrap()
}

/// Teacher-forced cross-entropy of the decoder on fixed latents.
fn decoder_cost(m: &Seq2Seq64, z: &Tensor64, prefix: &[usize], targets: &[usize]) -> f64 {
    let mut t = Tape64::new();
    let pv = m.params().register(&mut t, false);
    let zv = t.constant(z.clone());
    let logits = m.decode_on::<NoRng>(&mut t, &pv, zv, prefix, None).unwrap();
    let ce = t.cross_entropy(logits, targets).unwrap();
    t.value(ce).data()[0]
}

/// Every parameter of a tiny encoder-decoder under the full VQ objective.
pub fn full_model_case(seed: u64) -> f64 {
    let ids = [4usize, 5, 3, 1];
    let prefix = [0usize, 4, 5, 3];
    let targets = [4usize, 5, 3, 1];
    let beta = 0.25;
    let m = tiny_model(seed);
    let e = m.encode(&ids).unwrap();
    // a fixed stand-in for the gathered codebook rows
    let q = e.map(|x| x + 0.1);
    let mut t = Tape64::new();
    let pv = m.params().register(&mut t, true);
    let ev = m.encode_on::<NoRng>(&mut t, &pv, &ids, None).unwrap();
    let qv = t.constant(q.clone());
    let st = straight_through(&mut t, ev, qv).unwrap();
    let logits = m.decode_on::<NoRng>(&mut t, &pv, st, &prefix, None).unwrap();
    let ce = t.cross_entropy(logits, &targets).unwrap();
    let cfg = QuantizerConfig {
        beta,
        reduction: Reduction::Sum,
        ..QuantizerConfig::default()
    };
    let loss = vq_loss(&mut t, ev, qv, ce, &cfg).unwrap().loss;
    t.backward(loss).unwrap();

    // v = dCE/dz at z_q, then each parameter moves the cost through the
    // decoder directly and through the encoder along v + 2β(E - z_q)
    let h = 1e-5;
    let v: Vec<f64> = (0..q.len())
        .map(|i| {
            let (mut up, mut down) = (q.clone(), q.clone());
            up.data_mut()[i] += h;
            down.data_mut()[i] -= h;
            (decoder_cost(&m, &up, &prefix, &targets) - decoder_cost(&m, &down, &prefix, &targets)) / (2.0 * h)
        })
        .collect();
    let surrogate = |m: &Seq2Seq64| {
        let e_now = m.encode(&ids).unwrap();
        let enc: f64 = (0..e.len())
            .map(|i| (v[i] + 2.0 * beta * (e.data()[i] - q.data()[i])) * e_now.data()[i])
            .sum();
        enc + decoder_cost(m, &q, &prefix, &targets)
    };
    let mut worst = 0.0f64;
    for p in 0..m.params().len() {
        let g = t.grad(pv[p]).map(<[f64]>::to_vec);
        for j in 0..m.params().get(p).len() {
            let (mut up, mut down) = (m.clone(), m.clone());
            up.params_mut().get_mut(p).data_mut()[j] += h;
            down.params_mut().get_mut(p).data_mut()[j] -= h;
            let numeric = (surrogate(&up) - surrogate(&down)) / (2.0 * h);
            let a = g.as_ref().map_or(0.0, |g| g[j]);
            worst = worst.max((a - numeric).abs() / 1f64.max(numeric.abs()));
        }
    }
    worst
}

pub type Case = fn(u64) -> f64;

/// Every suite with its case count.
pub fn suites() -> Vec<(&'static str, Case, u64)> {
    vec![
        ("add/sub/mul", elementwise_binary as Case, 24),
        ("add_row/scale", add_row_and_scale, 24),
        ("matmul/transpose", matmul_and_transpose, 24),
        ("softmax", softmax_rows, 24),
        ("layer_norm", layer_norm, 24),
        ("gelu", gelu, 24),
        ("embedding", embedding_lookup, 24),
        ("cross_entropy", cross_entropy, 24),
        ("sum/mean/squared_error", reductions_and_squared_error, 24),
        ("slice/concat/reshape", slicing_concat_reshape, 24),
        ("stop_gradient/straight_through", straight_through_case, 24),
        ("composed vq objective", composed_vq_case, 24),
        ("full model parameters", full_model_case, 20),
    ]
}
