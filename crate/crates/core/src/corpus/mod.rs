//! Synthetic, deterministic training data: role-annotated explanatory
//! sentences and LaTeX-style expressions with out-of-distribution splits.

mod grammar;
mod math;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VqlError};

pub use grammar::{
    all_words, arg_sub_conclusion, conjunction_conclusion, find_anchor, further_spec_conclusion,
    generate_sentences, parse_sentence, sentence, substitution_conclusion, verb_sub_conclusion, Anchor,
    Family,
};
pub use math::{generate_math, MathExpression, Split, TRAIN_ALPHABET};

/// Semantic role of one token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Arg0,
    Arg1,
    Arg2,
    Pred,
    Mod,
    Neg,
    O,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Arg0 => "ARG0",
            Role::Arg1 => "ARG1",
            Role::Arg2 => "ARG2",
            Role::Pred => "PRED",
            Role::Mod => "MOD",
            Role::Neg => "NEG",
            Role::O => "O",
        }
    }

    pub fn is_argument(self) -> bool {
        matches!(self, Role::Arg0 | Role::Arg1 | Role::Arg2)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = VqlError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ARG0" => Role::Arg0,
            "ARG1" => Role::Arg1,
            "ARG2" => Role::Arg2,
            "PRED" => Role::Pred,
            "MOD" => Role::Mod,
            "NEG" => Role::Neg,
            "O" => Role::O,
            other => return Err(VqlError::Format(format!("unknown role {other:?}"))),
        })
    }
}

/// Tokens with one role label each.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub roles: Vec<Role>,
    pub template_id: usize,
    pub family: Family,
}

/// Maximal run of one non-`O` role.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Span {
    pub role: Role,
    pub start: usize,
    pub end: usize,
}

impl AnnotatedSentence {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn topic(&self) -> &'static str {
        self.family.topic()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn spans(&self) -> Vec<Span> {
        let mut out: Vec<Span> = Vec::new();
        for (i, &r) in self.roles.iter().enumerate() {
            if r == Role::O {
                continue;
            }
            match out.last_mut() {
                Some(s) if s.role == r && s.end == i => s.end = i + 1,
                _ => out.push(Span {
                    role: r,
                    start: i,
                    end: i + 1,
                }),
            }
        }
        out
    }

    pub fn span_tokens(&self, s: &Span) -> &[String] {
        &self.tokens[s.start..s.end]
    }

    /// Words carrying the predicate role.
    pub fn predicate(&self) -> Vec<&str> {
        self.tokens
            .iter()
            .zip(&self.roles)
            .filter(|(_, r)| **r == Role::Pred)
            .map(|(t, _)| t.as_str())
            .collect()
    }

    /// `token/ROLE` pairs separated by single spaces.
    pub fn to_line(&self) -> String {
        self.tokens
            .iter()
            .zip(&self.roles)
            .map(|(t, r)| format!("{t}/{r}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Parses a corpus line. The template is recovered by matching the
    /// grammar; lines outside the grammar are rejected.
    pub fn from_line(line: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut roles = Vec::new();
        for pair in line.split_whitespace() {
            let (t, r) = pair
                .rsplit_once('/')
                .ok_or_else(|| VqlError::Format(format!("expected token/ROLE, got {pair:?}")))?;
            tokens.push(t.to_string());
            roles.push(r.parse()?);
        }
        let parsed = parse_sentence(&tokens)
            .ok_or_else(|| VqlError::Format(format!("sentence outside the grammar: {line:?}")))?;
        if parsed.roles != roles {
            return Err(VqlError::Format(format!("role labels disagree with the grammar: {line:?}")));
        }
        Ok(parsed)
    }
}

pub fn corpus_to_string(sentences: &[AnnotatedSentence]) -> String {
    sentences.iter().map(|s| s.to_line() + "\n").collect()
}

pub fn corpus_from_str(s: &str) -> Result<Vec<AnnotatedSentence>> {
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .map(AnnotatedSentence::from_line)
        .collect()
}

/// Keeps the first occurrence of every distinct sentence.
pub fn distinct(sentences: impl IntoIterator<Item = AnnotatedSentence>) -> Vec<AnnotatedSentence> {
    let mut seen = std::collections::HashSet::new();
    sentences
        .into_iter()
        .filter(|s| seen.insert(s.tokens.clone()))
        .collect()
}

/// `count` distinct grammar sentences: `pinned` first, then fresh draws
/// from the generator until the count is reached.
pub fn training_corpus(seed: u64, count: usize, pinned: &[AnnotatedSentence]) -> Vec<AnnotatedSentence> {
    let mut out = distinct(pinned.iter().cloned());
    out.truncate(count);
    let mut seen: std::collections::HashSet<Vec<String>> = out.iter().map(|s| s.tokens.clone()).collect();
    let mut round = 0u64;
    while out.len() < count {
        let batch = generate_sentences(seed.wrapping_add(round.wrapping_mul(0x9e37_79b9)), count * 2);
        for s in batch {
            if out.len() == count {
                break;
            }
            if seen.insert(s.tokens.clone()) {
                out.push(s);
            }
        }
        round += 1;
        if round > 64 {
            break;
        }
    }
    out
}

/// The two premises of the shark/fish substitution example.
pub fn shark_premises() -> [AnnotatedSentence; 2] {
    [
        sentence(0, &["shark", "fish"]).expect("is-a template"),
        sentence(0, &["fish", "aquatic animal"]).expect("is-a template"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_corpus_is_distinct_and_pinned() {
        let pins = shark_premises();
        let c = training_corpus(3, 300, &pins);
        assert_eq!(c.len(), 300);
        assert_eq!(&c[..2], &pins[..]);
        assert_eq!(distinct(c.clone()).len(), 300);
        assert_eq!(c, training_corpus(3, 300, &pins));
    }

    #[test]
    fn corpus_lines_round_trip() {
        let c = generate_sentences(5, 50);
        assert_eq!(corpus_from_str(&corpus_to_string(&c)).unwrap(), c);
        assert!(AnnotatedSentence::from_line("a/O shark/PRED").is_err());
    }
}
