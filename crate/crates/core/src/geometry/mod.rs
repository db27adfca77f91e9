//! Latent-space control and measurement: interpolation paths and their
//! smoothness, per-position traversal, latent addition, role-content
//! statistics and premise substitution.

mod substitute;
mod wmd;

use std::collections::{BTreeMap, BTreeSet};

pub use substitute::{and_latent_index, substitute_and_decode, substitute_indices, Substitution, SubstitutionOp};
pub use wmd::{wmd, AlignmentResult};

use crate::autoencoder::VqAutoencoder;
use crate::codebook::{Codebook, Quantized};
use crate::corpus::AnnotatedSentence;
use crate::error::{contract, Result};
use crate::scalar::Scalar;
use crate::tensor::{euclidean, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct PathStep<T> {
    pub t: f64,
    pub indices: Vec<usize>,
    pub latents: Tensor<T>,
    /// Greedy decoding (word ids); empty until the path is decoded.
    pub decoded: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationPath<T> {
    pub step_size: f64,
    pub steps: Vec<PathStep<T>>,
}

impl<T: Scalar> InterpolationPath<T> {
    /// One line per step: `t<TAB>indices<TAB>sentence`.
    pub fn dump(&self, ae: &VqAutoencoder<T>) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let idx: Vec<String> = s.indices.iter().map(usize::to_string).collect();
            out.push_str(&format!("{:.1}\t{}\t{}\n", s.t, idx.join(","), ae.text(&s.decoded)));
        }
        out
    }
}

fn step_count(step_size: f64) -> Result<usize> {
    if !(step_size > 0.0 && step_size <= 1.0) {
        return Err(contract(format!("step size must be in (0, 1], got {step_size}")));
    }
    let n = (1.0 / step_size).round();
    if ((n * step_size) - 1.0).abs() > 1e-9 {
        return Err(contract(format!("step size {step_size} does not divide 1")));
    }
    Ok(n as usize)
}

/// Extends the shorter block by repeating its last row (the end-token
/// latent) until both have the same length.
pub fn pad_to_common<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let len = a.rows().max(b.rows());
    let pad = |x: &Tensor<T>| -> Result<Tensor<T>> {
        let mut rows = x.to_rows();
        let last = rows.last().cloned().ok_or_else(|| contract("empty latent block"))?;
        rows.resize(len, last);
        Tensor::from_rows(&rows)
    };
    Ok((pad(a)?, pad(b)?))
}

/// Path of `1/step_size + 1` steps from `source` to `target`. At step `t`
/// each token takes the entry minimising
/// `(1-t)·||z_prev - z^j|| + t·||z_target - z^j||`, lowest index on ties.
/// Steps are left undecoded.
pub fn interpolate_in<T: Scalar>(
    codebook: &Codebook<T>,
    source: &Tensor<T>,
    target: &Tensor<T>,
    step_size: f64,
) -> Result<InterpolationPath<T>> {
    if source.shape() != target.shape() {
        return Err(contract(format!(
            "latent lengths differ: {:?} vs {:?}",
            source.shape(),
            target.shape()
        )));
    }
    let n = step_count(step_size)?;
    let first = codebook.quantize(source)?;
    let mut steps = vec![PathStep {
        t: 0.0,
        indices: first.indices,
        latents: first.vectors,
        decoded: Vec::new(),
    }];
    for s in 1..=n {
        let t = s as f64 / n as f64;
        let prev = &steps[s - 1].latents;
        let indices: Vec<usize> = (0..source.rows())
            .map(|i| {
                let mut best = 0;
                let mut best_score = f64::INFINITY;
                for k in 0..codebook.size() {
                    let z = codebook.entry(k);
                    let score =
                        (1.0 - t) * euclidean(prev.row(i), z).as_f64() + t * euclidean(target.row(i), z).as_f64();
                    if score < best_score {
                        best_score = score;
                        best = k;
                    }
                }
                best
            })
            .collect();
        let latents = codebook.gather(&indices)?;
        steps.push(PathStep {
            t,
            indices,
            latents,
            decoded: Vec::new(),
        });
    }
    Ok(InterpolationPath { step_size, steps })
}

/// Interpolates between two quantised sentences and decodes each step.
/// With `pad` set, unequal lengths are reconciled by [`pad_to_common`].
pub fn interpolate<T: Scalar>(
    ae: &VqAutoencoder<T>,
    source: &Tensor<T>,
    target: &Tensor<T>,
    step_size: f64,
    pad: bool,
) -> Result<InterpolationPath<T>> {
    let mut path = if pad && source.rows() != target.rows() {
        let (a, b) = pad_to_common(source, target)?;
        interpolate_in(&ae.codebook, &a, &b, step_size)?
    } else {
        interpolate_in(&ae.codebook, source, target, step_size)?
    };
    for step in &mut path.steps {
        step.decoded = ae.decode(&step.latents)?;
    }
    Ok(path)
}

/// Smoothness of a sequence of sentence embeddings: the direct distance
/// over the summed consecutive distances. Consecutive duplicates are
/// dropped first; a path that never moves scores 1.
pub fn interpolation_smoothness<T: Scalar>(seqs: &[Tensor<T>]) -> Result<f64> {
    if seqs.len() < 2 {
        return Err(contract("a path needs at least two steps"));
    }
    let mut kept: Vec<&Tensor<T>> = vec![&seqs[0]];
    for s in &seqs[1..] {
        if *kept.last().expect("nonempty") != s {
            kept.push(s);
        }
    }
    if kept.len() == 1 {
        return Ok(1.0);
    }
    let direct = wmd(kept[0], kept[kept.len() - 1])?.cost;
    let mut total = 0.0;
    for w in kept.windows(2) {
        total += wmd(w[0], w[1])?.cost;
    }
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok(direct / total)
}

/// Embedding used to compare decoded sentences: the quantised latents of
/// the re-encoded words (the end-token row only when nothing was decoded).
pub fn sentence_embedding<T: Scalar>(ae: &VqAutoencoder<T>, words: &[usize]) -> Result<Tensor<T>> {
    let q = ae.quantize(words)?;
    if words.is_empty() {
        return Ok(q.vectors);
    }
    let rows: Vec<Vec<T>> = (0..words.len()).map(|i| q.vectors.row(i).to_vec()).collect();
    Tensor::from_rows(&rows)
}

/// IS of a decoded path, with sentences compared by [`sentence_embedding`].
pub fn path_smoothness<T: Scalar>(ae: &VqAutoencoder<T>, path: &InterpolationPath<T>) -> Result<f64> {
    let mut seqs = Vec::with_capacity(path.steps.len());
    let mut last: Option<&Vec<usize>> = None;
    for s in &path.steps {
        if last == Some(&s.decoded) {
            continue;
        }
        last = Some(&s.decoded);
        seqs.push(sentence_embedding(ae, &s.decoded)?);
    }
    if seqs.len() == 1 {
        return Ok(1.0);
    }
    interpolation_smoothness(&seqs)
}

/// Index sequences produced by re-sampling position `position`: the
/// original first, then the `n_variants - 1` nearest other entries.
pub fn traversal_variants<T: Scalar>(
    codebook: &Codebook<T>,
    indices: &[usize],
    position: usize,
    n_variants: usize,
) -> Result<Vec<Vec<usize>>> {
    if position >= indices.len() {
        return Err(contract(format!(
            "position {position} out of range for {} latent rows",
            indices.len()
        )));
    }
    if n_variants == 0 || n_variants > codebook.size() {
        return Err(contract(format!(
            "variant count must be in 1..={}, got {n_variants}",
            codebook.size()
        )));
    }
    let own = indices[position];
    let mut out = vec![indices.to_vec()];
    for k in codebook.nearest_n(codebook.entry(own), n_variants) {
        if out.len() == n_variants {
            break;
        }
        if k != own {
            let mut v = indices.to_vec();
            v[position] = k;
            out.push(v);
        }
    }
    Ok(out)
}

/// Decoded traversal variants (word ids) at one latent position.
pub fn traverse_position<T: Scalar>(
    ae: &VqAutoencoder<T>,
    indices: &[usize],
    position: usize,
    n_variants: usize,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    traversal_variants(&ae.codebook, indices, position, n_variants)?
        .into_iter()
        .map(|v| {
            let decoded = ae.decode_indices(&v)?;
            Ok((v, decoded))
        })
        .collect()
}

/// Position-wise sum over the common length, re-quantised.
pub fn latent_sum<T: Scalar>(codebook: &Codebook<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Quantized<T>> {
    if a.cols() != b.cols() {
        return Err(contract(format!("latent widths differ: {} vs {}", a.cols(), b.cols())));
    }
    let len = a.rows().min(b.rows());
    let rows: Vec<Vec<T>> = (0..len)
        .map(|i| a.row(i).iter().zip(b.row(i)).map(|(&x, &y)| x + y).collect())
        .collect();
    codebook.quantize(&Tensor::from_rows(&rows)?)
}

pub fn latent_arithmetic_add<T: Scalar>(
    ae: &VqAutoencoder<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let q = latent_sum(&ae.codebook, a, b)?;
    let decoded = ae.decode(&q.vectors)?;
    Ok((q.indices, decoded))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoleContentStats {
    /// `ROLE-word`, e.g. `PRED-is`.
    pub label: String,
    pub occurrences: usize,
    pub num_centers: usize,
    pub avg_dis: f64,
    pub max_dis: f64,
    pub min_dis: f64,
}

/// Statistics over `(label, codebook index)` observations, sorted by label.
pub fn role_content_stats<T: Scalar>(
    codebook: &Codebook<T>,
    observations: impl IntoIterator<Item = (String, usize)>,
) -> Vec<RoleContentStats> {
    let mut groups: BTreeMap<String, (usize, BTreeSet<usize>)> = BTreeMap::new();
    for (label, idx) in observations {
        let g = groups.entry(label).or_default();
        g.0 += 1;
        g.1.insert(idx);
    }
    groups
        .into_iter()
        .map(|(label, (occurrences, centers))| {
            let centers: Vec<usize> = centers.into_iter().collect();
            let mut dists = Vec::new();
            for (a, &i) in centers.iter().enumerate() {
                for &j in &centers[a + 1..] {
                    dists.push(euclidean(codebook.entry(i), codebook.entry(j)).as_f64());
                }
            }
            let (avg, max, min) = if dists.is_empty() {
                (0.0, 0.0, 0.0)
            } else {
                (
                    dists.iter().sum::<f64>() / dists.len() as f64,
                    dists.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    dists.iter().copied().fold(f64::INFINITY, f64::min),
                )
            };
            RoleContentStats {
                label,
                occurrences,
                num_centers: centers.len(),
                avg_dis: avg,
                max_dis: max,
                min_dis: min,
            }
        })
        .collect()
}

/// Quantises every sentence and groups the token indices by role-content.
pub fn disentanglement_stats<T: Scalar>(
    ae: &VqAutoencoder<T>,
    corpus: &[AnnotatedSentence],
) -> Result<Vec<RoleContentStats>> {
    let mut obs = Vec::new();
    for s in corpus {
        let q = ae.quantize(&ae.ids_of(&s.tokens)?)?;
        for (i, (tok, role)) in s.tokens.iter().zip(&s.roles).enumerate() {
            obs.push((format!("{role}-{tok}"), q.indices[i]));
        }
    }
    Ok(role_content_stats(&ae.codebook, obs))
}
