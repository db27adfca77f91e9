mod common;

use common::{randn, rng};
use vqlatent::checkpoint;
use vqlatent::corpus::{all_words, generate_sentences};
use vqlatent::train::initialise;
use vqlatent::vocab::{END, START};
use vqlatent::{ModelConfig, QuantizerConfig, Seq2Seq64, Tensor64, VqlError, Vocabulary};

fn tiny() -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        d_model: 8,
        n_heads: 2,
        n_layers_enc: 2,
        n_layers_dec: 2,
        d_ff: 12,
        max_len: 8,
        dropout: 0.0,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn decoder_is_causal() {
    let m = Seq2Seq64::new(tiny(), &mut rng(1)).unwrap();
    let z = randn(&[4, 8], &mut rng(2));
    let a = m.decode(&z, &[START, 5, 6, 7, 8]).unwrap();
    let b = m.decode(&z, &[START, 5, 6, 9, 4]).unwrap();
    for i in 0..3 {
        assert!(max_abs_diff(a.row(i), b.row(i)) < 1e-12, "row {i} saw the future");
    }
    assert!(max_abs_diff(a.row(3), b.row(3)) > 1e-6);
}

#[test]
fn decoder_reads_the_latents() {
    let m = Seq2Seq64::new(tiny(), &mut rng(3)).unwrap();
    let mut r = rng(4);
    let z = randn(&[3, 8], &mut r);
    let base = m.decode(&z, &[START, 5]).unwrap();
    for row in 0..3 {
        let mut rows = z.to_rows();
        rows[row][0] += 0.5;
        let moved = m.decode(&Tensor64::from_rows(&rows).unwrap(), &[START, 5]).unwrap();
        assert!(max_abs_diff(base.data(), moved.data()) > 1e-6, "latent row {row} ignored");
    }
    // latent sequences of any length are accepted
    for len in 1..=6 {
        let out = m.decode(&randn(&[len, 8], &mut r), &[START]).unwrap();
        assert_eq!(out.shape(), &[1, 11]);
        assert!(out.data().iter().all(|x| x.is_finite()));
    }
}

#[test]
fn encoder_sees_the_whole_sentence() {
    let m = Seq2Seq64::new(tiny(), &mut rng(5)).unwrap();
    let a = m.encode(&[5, 6, 7, END]).unwrap();
    let b = m.encode(&[5, 6, 9, END]).unwrap();
    assert_eq!(a.shape(), &[4, 8]);
    // bidirectional: the first row depends on a later token
    assert!(max_abs_diff(a.row(0), b.row(0)) > 1e-9);
    // positions matter
    let c = m.encode(&[6, 5, 7, END]).unwrap();
    assert!(max_abs_diff(a.row(0), c.row(1)) > 1e-9);
}

#[test]
fn construction_is_seeded() {
    let a = Seq2Seq64::new(tiny(), &mut rng(9)).unwrap();
    let b = Seq2Seq64::new(tiny(), &mut rng(9)).unwrap();
    let c = Seq2Seq64::new(tiny(), &mut rng(10)).unwrap();
    let z = randn(&[2, 8], &mut rng(0));
    assert_eq!(a.decode(&z, &[START, 4]).unwrap(), b.decode(&z, &[START, 4]).unwrap());
    assert_ne!(a.decode(&z, &[START, 4]).unwrap(), c.decode(&z, &[START, 4]).unwrap());
}

#[test]
fn input_contracts() {
    let m = Seq2Seq64::new(tiny(), &mut rng(1)).unwrap();
    assert!(matches!(m.encode(&[5; 9]), Err(VqlError::Input(_))));
    assert!(matches!(m.encode(&[11]), Err(VqlError::Input(_))));
    assert!(m.decode(&randn(&[2, 7], &mut rng(0)), &[START]).is_err());
    let z = randn(&[2, 8], &mut rng(0));
    assert!(m.greedy_generate(&z, 100).unwrap().len() <= 7);

    let bad = [
        ModelConfig { d_model: 9, ..tiny() },
        ModelConfig { n_heads: 0, ..tiny() },
        ModelConfig { vocab_size: 2, ..tiny() },
        ModelConfig { max_len: 2, ..tiny() },
        ModelConfig { dropout: 1.0, ..tiny() },
    ];
    for cfg in bad {
        assert!(Seq2Seq64::new(cfg.clone(), &mut rng(0)).is_err(), "{cfg:?}");
    }
}

fn small_autoencoder<T: vqlatent::Scalar>() -> vqlatent::VqAutoencoder<T> {
    let vocab = Vocabulary::from_words(all_words());
    let data: Vec<Vec<usize>> = generate_sentences(3, 40)
        .iter()
        .map(|s| s.tokens.iter().map(|w| vocab.id(w)).collect())
        .collect();
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        d_model: 8,
        n_heads: 2,
        n_layers_enc: 1,
        n_layers_dec: 1,
        d_ff: 16,
        max_len: 32,
        dropout: 0.1,
    };
    let q = QuantizerConfig { codebook_size: 16, ..QuantizerConfig::default() };
    initialise::<T>(cfg, q, vocab, &data, 11).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ae = small_autoencoder::<f32>();
    let bytes = checkpoint::to_bytes(&ae).unwrap();
    let back = checkpoint::from_bytes::<f32>(&bytes).unwrap();
    assert_eq!(checkpoint::to_bytes(&back).unwrap(), bytes);
    assert_eq!(back.codebook.entries(), ae.codebook.entries());
    assert_eq!(back.codebook.counts(), ae.codebook.counts());
    assert_eq!(back.codebook.sums(), ae.codebook.sums());
    assert_eq!(back.vocab, ae.vocab);
    assert_eq!(back.quantizer, ae.quantizer);
    let ids = ae.ids_of(&["a", "shark", "is", "a", "kind", "of", "fish"]).unwrap();
    assert_eq!(back.embed(&ids).unwrap(), ae.embed(&ids).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&ae, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    let loaded = checkpoint::load::<f32>(&path).unwrap();
    assert_eq!(checkpoint::to_bytes(&loaded).unwrap(), bytes);

    // the file stores 32-bit floats, so a 64-bit model is widened exactly
    let wide = checkpoint::load::<f64>(&path).unwrap();
    let narrow: Vec<f64> = ae.codebook.entries().data().iter().map(|&x| x as f64).collect();
    assert_eq!(wide.codebook.entries().data(), &narrow[..]);
    assert_eq!(checkpoint::to_bytes(&wide).unwrap(), bytes);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = checkpoint::to_bytes(&small_autoencoder::<f64>()).unwrap();
    assert!(checkpoint::from_bytes::<f64>(&bytes[..bytes.len() - 1]).is_err());
    assert!(checkpoint::from_bytes::<f64>(&[]).is_err());
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    assert!(checkpoint::from_bytes::<f64>(&magic).is_err());
    let mut trailing = bytes;
    trailing.push(0);
    assert!(checkpoint::from_bytes::<f64>(&trailing).is_err());
    assert!(matches!(
        checkpoint::load::<f64>(std::path::Path::new("/nonexistent/m.ckpt")),
        Err(VqlError::Io { .. })
    ));
}
