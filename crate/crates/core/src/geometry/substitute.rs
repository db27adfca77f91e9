//! Conclusions from two premises by splicing their latent token rows.

use std::fmt;
use std::str::FromStr;

use crate::autoencoder::VqAutoencoder;
use crate::corpus::{conjunction_conclusion, find_anchor, further_spec_conclusion, sentence, AnnotatedSentence};
use crate::error::{Result, VqlError};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SubstitutionOp {
    ArgSub,
    VerbSub,
    FurtherSpec,
    Conjunction,
}

impl SubstitutionOp {
    pub const ALL: [SubstitutionOp; 4] = [Self::ArgSub, Self::VerbSub, Self::FurtherSpec, Self::Conjunction];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ArgSub => "arg_sub",
            Self::VerbSub => "verb_sub",
            Self::FurtherSpec => "further_spec",
            Self::Conjunction => "conjunction",
        }
    }

    /// Token-level conclusion the latent operation is expected to produce.
    pub fn oracle(self, p1: &AnnotatedSentence, p2: &AnnotatedSentence) -> Option<Vec<String>> {
        match self {
            Self::ArgSub => crate::corpus::arg_sub_conclusion(p1, p2),
            Self::VerbSub => crate::corpus::verb_sub_conclusion(p1, p2),
            Self::FurtherSpec => further_spec_conclusion(p1, p2).map(|(_, _, t)| t),
            Self::Conjunction => conjunction_conclusion(p1, p2).map(|(_, _, t)| t),
        }
    }
}

impl fmt::Display for SubstitutionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubstitutionOp {
    type Err = VqlError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| VqlError::Input(format!("unknown operation {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Substitution {
    pub indices: Vec<usize>,
    /// Greedy decoding (word ids).
    pub decoded: Vec<usize>,
}

fn no_anchor(op: SubstitutionOp, p1: &AnnotatedSentence, p2: &AnnotatedSentence) -> VqlError {
    VqlError::NoAnchor(format!("{op}: {:?} / {:?}", p1.text(), p2.text()))
}

/// Splices latent index rows. `i1`/`i2` hold one index per token of
/// `p1`/`p2` followed by the end-token index; `and_index` is the latent of
/// the connective used by conjunction.
pub fn substitute_indices(
    p1: &AnnotatedSentence,
    i1: &[usize],
    p2: &AnnotatedSentence,
    i2: &[usize],
    op: SubstitutionOp,
    and_index: usize,
) -> Result<Vec<usize>> {
    if i1.len() != p1.len() + 1 || i2.len() != p2.len() + 1 {
        return Err(VqlError::Contract(
            "latent rows must be one per token plus the end token".into(),
        ));
    }
    let n2 = p2.len();
    let out = match op {
        SubstitutionOp::ArgSub | SubstitutionOp::VerbSub => {
            let a = find_anchor(p1, p2, op == SubstitutionOp::VerbSub).ok_or_else(|| no_anchor(op, p1, p2))?;
            let mut v = i2[..a.target.start].to_vec();
            v.extend_from_slice(&i1[a.replacement.start..a.replacement.end]);
            v.extend_from_slice(&i2[a.target.end..]);
            v
        }
        SubstitutionOp::FurtherSpec => {
            let (_, tail, _) = further_spec_conclusion(p1, p2).ok_or_else(|| no_anchor(op, p1, p2))?;
            let mut v = i2[..n2].to_vec();
            v.extend_from_slice(&i1[tail.start..tail.end]);
            v.push(i2[n2]);
            v
        }
        SubstitutionOp::Conjunction => {
            let (prefix, suffix, _) = conjunction_conclusion(p1, p2).ok_or_else(|| no_anchor(op, p1, p2))?;
            let n1 = p1.len();
            let mut v = i2[..n2 - suffix].to_vec();
            v.push(and_index);
            v.extend_from_slice(&i1[prefix..n1 - suffix]);
            v.extend_from_slice(&i2[n2 - suffix..]);
            v
        }
    };
    Ok(out)
}

/// Codebook index of "and" inside a fixed grammar sentence.
pub fn and_latent_index<T: Scalar>(ae: &VqAutoencoder<T>) -> Result<usize> {
    let s = sentence(8, &["bird", "fly", "swim"]).expect("conjunction template");
    let pos = s.tokens.iter().position(|w| w == "and").expect("template contains and");
    Ok(ae.quantize(&ae.ids_of(&s.tokens)?)?.indices[pos])
}

pub fn substitute_and_decode<T: Scalar>(
    ae: &VqAutoencoder<T>,
    p1: &AnnotatedSentence,
    p2: &AnnotatedSentence,
    op: SubstitutionOp,
) -> Result<Substitution> {
    let i1 = ae.quantize(&ae.ids_of(&p1.tokens)?)?.indices;
    let i2 = ae.quantize(&ae.ids_of(&p2.tokens)?)?.indices;
    let and_index = if op == SubstitutionOp::Conjunction {
        and_latent_index(ae)?
    } else {
        0
    };
    let indices = substitute_indices(p1, &i1, p2, &i2, op, and_index)?;
    let decoded = ae.decode_indices(&indices)?;
    Ok(Substitution { indices, decoded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(s: &AnnotatedSentence, base: usize) -> Vec<usize> {
        (0..=s.len()).map(|i| base + i).collect()
    }

    #[test]
    fn arg_sub_splices_only_the_target_span() {
        let p1 = sentence(0, &["shark", "fish"]).unwrap();
        let p2 = sentence(0, &["fish", "aquatic animal"]).unwrap();
        let (i1, i2) = (ids(&p1, 100), ids(&p2, 200));
        let out = substitute_indices(&p1, &i1, &p2, &i2, SubstitutionOp::ArgSub, 0).unwrap();
        // "a" from P2, "shark" from P1, the rest of P2 untouched
        assert_eq!(out, vec![200, 101, 202, 203, 204, 205, 206, 207, 208]);
    }

    #[test]
    fn identical_premises_are_a_fixed_point() {
        let p = sentence(0, &["shark", "fish"]).unwrap();
        let i = ids(&p, 10);
        for op in [SubstitutionOp::ArgSub, SubstitutionOp::VerbSub] {
            assert_eq!(substitute_indices(&p, &i, &p, &i, op, 0).unwrap(), i);
        }
    }

    #[test]
    fn conjunction_inserts_connective() {
        let p1 = sentence(6, &["bird", "fly"]).unwrap();
        let p2 = sentence(6, &["bird", "swim"]).unwrap();
        let out = substitute_indices(&p1, &ids(&p1, 10), &p2, &ids(&p2, 20), SubstitutionOp::Conjunction, 99).unwrap();
        assert_eq!(out, vec![20, 21, 22, 23, 99, 13, 24]);
    }

    #[test]
    fn unrelated_premises_have_no_anchor() {
        let p1 = sentence(2, &["heat", "erosion"]).unwrap();
        let p2 = sentence(6, &["bird", "fly"]).unwrap();
        let err = substitute_indices(&p1, &ids(&p1, 0), &p2, &ids(&p2, 0), SubstitutionOp::ArgSub, 0);
        assert!(matches!(err, Err(VqlError::NoAnchor(_))));
    }

    #[test]
    fn op_names_round_trip() {
        for op in SubstitutionOp::ALL {
            assert_eq!(op.as_str().parse::<SubstitutionOp>().unwrap(), op);
        }
    }
}
