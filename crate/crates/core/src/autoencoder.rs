//! Encoder, codebook and decoder bundled into one inference object.

use crate::codebook::{Codebook, QuantizerConfig, Quantized};
use crate::error::{input, Result};
use crate::model::Seq2Seq;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vocab::{Vocabulary, END};

#[derive(Clone, Debug)]
pub struct VqAutoencoder<T> {
    pub model: Seq2Seq<T>,
    pub codebook: Codebook<T>,
    pub quantizer: QuantizerConfig,
    pub vocab: Vocabulary,
}

impl<T: Scalar> VqAutoencoder<T> {
    /// Word ids followed by the end token, as fed to the encoder.
    pub fn encoder_ids(&self, words: &[usize]) -> Vec<usize> {
        let mut ids = words.to_vec();
        ids.push(END);
        ids
    }

    pub fn ids_of<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<usize>> {
        words
            .iter()
            .map(|w| {
                let w = w.as_ref();
                if self.vocab.contains(w) {
                    Ok(self.vocab.id(w))
                } else {
                    Err(input(format!("word {w:?} is not in the vocabulary")))
                }
            })
            .collect()
    }

    /// Pre-quantisation encoder output `[L+1 × I]` (the end token included).
    pub fn embed(&self, words: &[usize]) -> Result<Tensor<T>> {
        self.model.encode(&self.encoder_ids(words))
    }

    pub fn quantize(&self, words: &[usize]) -> Result<Quantized<T>> {
        self.codebook.quantize(&self.embed(words)?)
    }

    /// Mean of the pre-quantisation rows.
    pub fn pooled(&self, words: &[usize]) -> Result<Vec<T>> {
        Ok(mean_rows(&self.embed(words)?))
    }

    /// Greedy decoding of a latent block; returns word ids.
    pub fn decode(&self, latents: &Tensor<T>) -> Result<Vec<usize>> {
        let limit = self.model.config().max_len - 1;
        self.model.greedy_generate(latents, limit)
    }

    pub fn decode_indices(&self, indices: &[usize]) -> Result<Vec<usize>> {
        self.decode(&self.codebook.gather(indices)?)
    }

    pub fn reconstruct(&self, words: &[usize]) -> Result<Vec<usize>> {
        self.decode(&self.quantize(words)?.vectors)
    }

    pub fn words(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.vocab.word(i).unwrap_or("<unk>").to_string())
            .collect()
    }

    pub fn text(&self, ids: &[usize]) -> String {
        self.words(ids).join(" ")
    }
}

pub fn mean_rows<T: Scalar>(t: &Tensor<T>) -> Vec<T> {
    let n = T::of_usize(t.rows());
    let mut acc = vec![T::zero(); t.cols()];
    for i in 0..t.rows() {
        for (a, &v) in acc.iter_mut().zip(t.row(i)) {
            *a = *a + v;
        }
    }
    acc.into_iter().map(|v| v / n).collect()
}
