//! LaTeX-style expressions with one in-distribution and four
//! out-of-distribution splits.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VqlError};

/// Variable names seen in training.
pub const TRAIN_ALPHABET: &[&str] = &[
    "a", "b", "c", "d", "f", "g", "h", "k", "m", "n", "p", "q", "r", "s", "t", "u", "v", "w", "x", "y", "z", "A",
    "B", "C", "E", "F", "G", "H", "K", "M", "N", "P", "R", "U", "V", "W",
];

/// Disjoint names used by the VAR split.
const HELD_OUT_ALPHABET: &[&str] = &[
    "\\alpha", "\\beta", "\\gamma", "\\delta", "\\epsilon", "\\zeta", "\\eta", "\\theta", "\\kappa", "\\lambda",
    "\\mu", "\\nu", "\\xi", "\\rho", "\\sigma", "\\phi", "\\chi", "\\psi", "\\omega",
];

const UNARY: &[&str] = &["\\cos", "\\sin", "\\log", "\\exp"];
const BINARY: &[&str] = &["+", "-", "\\times"];

/// Variable-count range of the training distribution.
const TRAIN_VARS: (usize, usize) = (2, 3);
const LEN_VARS: (usize, usize) = (4, 5);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Eval,
    Var,
    Easy,
    Eq,
    Len,
}

impl Split {
    pub const ALL: [Split; 5] = [Split::Eval, Split::Var, Split::Easy, Split::Eq, Split::Len];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Eval => "EVAL",
            Split::Var => "VAR",
            Split::Easy => "EASY",
            Split::Eq => "EQ",
            Split::Len => "LEN",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = VqlError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| VqlError::Format(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MathExpression {
    pub tokens: Vec<String>,
    pub split: Split,
    pub variables: BTreeSet<String>,
    /// Operator-tree depth; a bare variable has depth 0.
    pub depth: usize,
}

impl MathExpression {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Expression, a tab, then the split tag.
    pub fn to_line(&self) -> String {
        format!("{}\t{}", self.text(), self.split)
    }

    pub fn balanced(&self) -> bool {
        let mut depth = 0i64;
        for t in &self.tokens {
            match t.as_str() {
                "(" => depth += 1,
                ")" => {
                    depth -= 1;
                    if depth < 0 {
                        return false;
                    }
                }
                _ => {}
            }
        }
        depth == 0
    }
}

struct Expr {
    tokens: Vec<String>,
    depth: usize,
    compound: bool,
}

fn build<R: Rng>(vars: &[&str], rng: &mut R) -> Expr {
    let mut parts: Vec<Expr> = vars
        .iter()
        .map(|v| Expr {
            tokens: vec![v.to_string()],
            depth: 0,
            compound: false,
        })
        .collect();
    for p in parts.iter_mut() {
        if rng.random_bool(0.35) {
            wrap_unary(p, rng);
        }
    }
    while parts.len() > 1 {
        let i = rng.random_range(0..parts.len());
        let left = parts.swap_remove(i);
        let j = rng.random_range(0..parts.len());
        let right = parts.swap_remove(j);
        let op = *BINARY.choose(rng).expect("nonempty");
        let depth = 1 + left.depth.max(right.depth);
        let mut tokens = Vec::new();
        for (side, e) in [(0, left), (1, right)] {
            let paren = e.compound && (op == "\\times" || (op == "-" && side == 1));
            if paren {
                tokens.push("(".into());
            }
            tokens.extend(e.tokens);
            if paren {
                tokens.push(")".into());
            }
            if side == 0 {
                tokens.push(op.to_string());
            }
        }
        parts.push(Expr {
            tokens,
            depth,
            compound: true,
        });
    }
    let mut e = parts.pop().expect("at least one variable");
    if e.depth == 0 && rng.random_bool(0.5) {
        wrap_unary(&mut e, rng);
    }
    e
}

fn wrap_unary<R: Rng>(e: &mut Expr, rng: &mut R) {
    let f = *UNARY.choose(rng).expect("nonempty");
    let mut tokens = vec![f.to_string(), "(".into()];
    tokens.append(&mut e.tokens);
    tokens.push(")".into());
    e.tokens = tokens;
    e.depth += 1;
    e.compound = false;
}

fn sample<R: Rng>(split: Split, rng: &mut R) -> MathExpression {
    let (alphabet, (lo, hi)) = match split {
        Split::Eval | Split::Eq => (TRAIN_ALPHABET, TRAIN_VARS),
        Split::Var => (HELD_OUT_ALPHABET, TRAIN_VARS),
        Split::Easy => (TRAIN_ALPHABET, (1, TRAIN_VARS.0 - 1)),
        Split::Len => (TRAIN_ALPHABET, LEN_VARS),
    };
    let n = rng.random_range(lo..=hi);
    let mut names = alphabet.to_vec();
    names.shuffle(rng);
    let vars = &names[..n];
    let expr = build(vars, rng);
    let mut variables: BTreeSet<String> = vars.iter().map(|s| s.to_string()).collect();
    let mut tokens = expr.tokens;
    if split == Split::Eq {
        let lhs = *names[n..].choose(rng).expect("alphabet larger than variable count");
        variables.insert(lhs.to_string());
        let mut eq = vec![lhs.to_string(), "=".to_string()];
        eq.append(&mut tokens);
        tokens = eq;
    }
    MathExpression {
        tokens,
        split,
        variables,
        depth: expr.depth,
    }
}

/// `count` expressions of one split, a pure function of `(seed, split)`.
pub fn generate_math(seed: u64, count: usize, split: Split) -> Vec<MathExpression> {
    let salt = Split::ALL.iter().position(|&s| s == split).expect("listed") as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (salt << 32));
    (0..count).map(|_| sample(split, &mut rng)).collect()
}
