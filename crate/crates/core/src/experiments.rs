//! End-to-end experiments over a trained autoencoder and a grammar corpus.
//! The CLI and the acceptance suite both drive these.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::VqAutoencoder;
use crate::bleu::corpus_bleu;
use crate::corpus::{parse_sentence, AnnotatedSentence};
use crate::error::{input, Result};
use crate::geometry::{interpolate, path_smoothness, substitute_and_decode, InterpolationPath, SubstitutionOp};
use crate::scalar::Scalar;
use crate::tree::{
    cross_region_consistency, extract_path, fit_tree, guided_move, margins, tree_metrics, DecisionTree, TreeMetrics,
    TreeParams, TreePath,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionReport {
    /// `(reference, reconstruction, exact, token accuracy)` per sentence.
    pub rows: Vec<(String, String, bool, f64)>,
    pub exact_match: f64,
    pub token_accuracy: f64,
    pub bleu: Vec<f64>,
}

/// Greedy reconstructions scored position by position against the
/// reference (extra or missing tokens count as errors).
pub fn reconstruction<T: Scalar>(ae: &VqAutoencoder<T>, corpus: &[AnnotatedSentence]) -> Result<ReconstructionReport> {
    let mut rows = Vec::with_capacity(corpus.len());
    let mut pairs = Vec::with_capacity(corpus.len());
    let (mut hits, mut total, mut exact) = (0usize, 0usize, 0usize);
    for s in corpus {
        let out = ae.words(&ae.reconstruct(&ae.ids_of(&s.tokens)?)?);
        let len = out.len().max(s.len());
        let same = s.tokens.iter().zip(&out).filter(|(a, b)| a == b).count();
        hits += same;
        total += len;
        let ok = out == s.tokens;
        exact += ok as usize;
        rows.push((s.text(), out.join(" "), ok, same as f64 / len.max(1) as f64));
        pairs.push((out, s.tokens.clone()));
    }
    Ok(ReconstructionReport {
        rows,
        exact_match: exact as f64 / corpus.len().max(1) as f64,
        token_accuracy: hits as f64 / total.max(1) as f64,
        bleu: corpus_bleu(&pairs, 4),
    })
}

impl ReconstructionReport {
    pub fn render(&self) -> String {
        let mut s = String::from("exact\ttoken_acc\treference\treconstruction\n");
        for (r, o, ok, acc) in &self.rows {
            let _ = writeln!(s, "{}\t{acc:.4}\t{r}\t{o}", *ok as u8);
        }
        let _ = writeln!(s, "# exact_match {:.4}", self.exact_match);
        let _ = writeln!(s, "# token_accuracy {:.4}", self.token_accuracy);
        for (n, b) in self.bleu.iter().enumerate() {
            let _ = writeln!(s, "# bleu{} {b:.4}", n + 1);
        }
        s
    }
}

/// `n` ordered pairs of distinct indices below `len`, drawn uniformly.
pub fn sample_pairs(len: usize, n: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if len < 2 {
        return Err(input("need at least two sentences to form pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let a = rng.random_range(0..len);
            let mut b = rng.random_range(0..len - 1);
            if b >= a {
                b += 1;
            }
            (a, b)
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct InterpolationRun<T> {
    pub source: usize,
    pub target: usize,
    pub path: InterpolationPath<T>,
    pub smoothness: f64,
}

pub fn interpolation_runs<T: Scalar>(
    ae: &VqAutoencoder<T>,
    corpus: &[AnnotatedSentence],
    pairs: &[(usize, usize)],
    step_size: f64,
) -> Result<Vec<InterpolationRun<T>>> {
    pairs
        .iter()
        .map(|&(a, b)| {
            let za = ae.quantize(&ae.ids_of(&corpus[a].tokens)?)?.vectors;
            let zb = ae.quantize(&ae.ids_of(&corpus[b].tokens)?)?.vectors;
            let path = interpolate(ae, &za, &zb, step_size, true)?;
            let smoothness = path_smoothness(ae, &path)?;
            Ok(InterpolationRun {
                source: a,
                target: b,
                path,
                smoothness,
            })
        })
        .collect()
}

/// `(mean, max, min)` of the smoothness scores.
pub fn smoothness_summary<T>(runs: &[InterpolationRun<T>]) -> (f64, f64, f64) {
    let v: Vec<f64> = runs.iter().map(|r| r.smoothness).collect();
    if v.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    (
        v.iter().sum::<f64>() / v.len() as f64,
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        v.iter().copied().fold(f64::INFINITY, f64::min),
    )
}

/// Two grammar-defined regions; label 0 is the source, 1 the target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RegionSpec {
    Topic(String, String),
    Predicate(String, String),
    Argument(String, String),
}

impl FromStr for RegionSpec {
    type Err = crate::error::VqlError;

    /// `topic:if-then,is-a`, `predicate:causes,means` or
    /// `argument:water,something`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || input(format!("region spec {s:?} is not kind:source,target"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let (a, b) = rest.split_once(',').ok_or_else(bad)?;
        if a.is_empty() || b.is_empty() || a == b {
            return Err(bad());
        }
        let (a, b) = (a.to_string(), b.to_string());
        match kind {
            "topic" => Ok(Self::Topic(a, b)),
            "predicate" => Ok(Self::Predicate(a, b)),
            "argument" => Ok(Self::Argument(a, b)),
            _ => Err(bad()),
        }
    }
}

impl RegionSpec {
    pub fn label(&self, s: &AnnotatedSentence) -> Option<usize> {
        let pick = |a: bool, b: bool| match (a, b) {
            (true, false) => Some(0),
            (false, true) => Some(1),
            _ => None,
        };
        match self {
            Self::Topic(a, b) => pick(s.topic() == a, s.topic() == b),
            Self::Predicate(a, b) => {
                let p = s.predicate().join(" ");
                pick(&p == a, &p == b)
            }
            Self::Argument(a, b) => {
                let args: Vec<String> = s
                    .spans()
                    .iter()
                    .filter(|sp| sp.role.is_argument())
                    .map(|sp| s.span_tokens(sp).join(" "))
                    .collect();
                pick(args.contains(a), args.contains(b))
            }
        }
    }

    /// Whether a decoded sentence parses and lies in the target region.
    pub fn in_target<S: AsRef<str>>(&self, tokens: &[S]) -> bool {
        parse_sentence(tokens).is_some_and(|p| self.label(&p) == Some(1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoveRecord {
    pub source: String,
    /// Original decoding, then one sentence per edit.
    pub outputs: Vec<String>,
    pub edits: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
pub struct TreeReport {
    pub tree: DecisionTree,
    pub train_accuracy: f64,
    /// On the held-out fifth of the region samples.
    pub heldout: TreeMetrics,
    pub path: TreePath,
    pub moves: Vec<MoveRecord>,
    pub consistency: f64,
}

/// Fits a tree on pooled latents of the two regions (every fifth sample
/// held out for the metrics), extracts the path into the target region and
/// moves up to `max_moves` source sentences along it. Consistency is the
/// fraction whose final decoding lands in the target region.
pub fn tree_experiment<T: Scalar>(
    ae: &VqAutoencoder<T>,
    corpus: &[AnnotatedSentence],
    region: &RegionSpec,
    params: TreeParams,
    max_moves: usize,
) -> Result<TreeReport> {
    let mut train = (Vec::new(), Vec::new());
    let mut held = (Vec::new(), Vec::new());
    let mut sources = Vec::new();
    let mut seen = 0usize;
    for s in corpus {
        let Some(label) = region.label(s) else { continue };
        let ids = ae.ids_of(&s.tokens)?;
        let pooled: Vec<f64> = ae.pooled(&ids)?.into_iter().map(Scalar::as_f64).collect();
        let bucket = if seen % 5 == 4 { &mut held } else { &mut train };
        bucket.0.push(pooled);
        bucket.1.push(label);
        if label == 0 {
            sources.push((s.text(), ids));
        }
        seen += 1;
    }
    let tree = fit_tree(&train.0, &train.1, params)?;
    let train_accuracy = tree.accuracy(&train.0, &train.1);
    let heldout = tree_metrics(&tree, &held.0, &held.1, 1);
    let path = extract_path(&tree, 1)?;
    let eps = margins(&train.0);
    let mut moves = Vec::new();
    for (text, ids) in sources.into_iter().take(max_moves) {
        let mv = guided_move(ae, &ids, &path, &eps)?;
        moves.push(MoveRecord {
            source: text,
            outputs: mv.sentences.iter().map(|s| ae.text(s)).collect(),
            edits: mv.edits,
        });
    }
    let consistency = cross_region_consistency(&moves, |m| {
        let last = m.outputs.last().expect("original decoding is always present");
        let toks: Vec<&str> = last.split_whitespace().collect();
        region.in_target(&toks)
    });
    Ok(TreeReport {
        tree,
        train_accuracy,
        heldout,
        path,
        moves,
        consistency,
    })
}

impl TreeReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let m = &self.heldout;
        let _ = writeln!(s, "train_accuracy {:.4}", self.train_accuracy);
        let _ = writeln!(s, "separability {:.4}", m.separability);
        let _ = writeln!(s, "density_precision {:.4}", m.density_precision);
        let _ = writeln!(s, "density_recall {:.4}", m.density_recall);
        let _ = writeln!(s, "f1 {:.4}", m.f1);
        let _ = writeln!(s, "cross_region_consistency {:.4}", self.consistency);
        s.push_str("path\n");
        for c in &self.path.steps {
            let _ = writeln!(s, "  {c}");
        }
        s.push_str("moves\n");
        for mv in &self.moves {
            let _ = writeln!(s, "  {}", mv.source);
            for o in &mv.outputs[1..] {
                let _ = writeln!(s, "    -> {o}");
            }
        }
        s
    }
}

/// Premise pairs from `corpus` for which `op` yields a conclusion inside
/// the grammar; `n` of them are drawn without replacement.
pub fn substitution_pairs(corpus: &[AnnotatedSentence], op: SubstitutionOp, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut all = Vec::new();
    for (i, p1) in corpus.iter().enumerate() {
        for (j, p2) in corpus.iter().enumerate() {
            if i == j {
                continue;
            }
            if let Some(c) = op.oracle(p1, p2) {
                if c != p2.tokens && parse_sentence(&c).is_some() {
                    all.push((i, j));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all.truncate(n);
    all
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceRecord {
    pub op: SubstitutionOp,
    pub p1: String,
    pub p2: String,
    pub expected: String,
    pub decoded: String,
}

impl InferenceRecord {
    pub fn exact(&self) -> bool {
        self.expected == self.decoded
    }
}

pub fn inference_runs<T: Scalar>(
    ae: &VqAutoencoder<T>,
    premises: &[(AnnotatedSentence, AnnotatedSentence)],
    op: SubstitutionOp,
) -> Result<Vec<InferenceRecord>> {
    premises
        .iter()
        .map(|(p1, p2)| {
            let sub = substitute_and_decode(ae, p1, p2, op)?;
            let expected = op.oracle(p1, p2).map(|t| t.join(" ")).unwrap_or_default();
            Ok(InferenceRecord {
                op,
                p1: p1.text(),
                p2: p2.text(),
                expected,
                decoded: ae.text(&sub.decoded),
            })
        })
        .collect()
}

pub fn exact_match_rate(records: &[InferenceRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.exact()).count() as f64 / records.len() as f64
}

/// A random sentence index, used by commands that need a default example.
pub fn pick_index(len: usize, seed: u64) -> usize {
    let idx: Vec<usize> = (0..len).collect();
    *idx.choose(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap_or(&0)
}
