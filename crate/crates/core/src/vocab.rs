//! Word-level vocabulary with four reserved ids.

use std::collections::HashMap;

use crate::error::{Result, VqlError};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;
pub const N_SPECIAL: usize = 4;

const SPECIAL_NAMES: [&str; N_SPECIAL] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from words in first-seen order; duplicates are
    /// ignored.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::default();
        for w in words {
            let w = w.as_ref();
            if !v.index.contains_key(w) {
                v.index.insert(w.to_string(), v.words.len() + N_SPECIAL);
                v.words.push(w.to_string());
            }
        }
        v
    }

    /// Total number of ids including the specials.
    pub fn len(&self) -> usize {
        self.words.len() + N_SPECIAL
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        if id < N_SPECIAL {
            SPECIAL_NAMES.get(id).copied()
        } else {
            self.words.get(id - N_SPECIAL).map(String::as_str)
        }
    }

    /// Regular words in id order.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// `[start, ids..., end]`; unknown words map to the unk id.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut ids = vec![START];
        ids.extend(text.split_whitespace().map(|w| self.id(w)));
        ids.push(END);
        ids
    }

    /// Word ids followed by the end token, the encoder input convention.
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        let mut ids: Vec<usize> = words.iter().map(|w| self.id(w.as_ref())).collect();
        ids.push(END);
        ids
    }

    /// Joins regular and unk tokens with spaces; pad/start/end are dropped.
    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                PAD | START | END => {}
                _ => out.push(
                    self.word(id)
                        .ok_or_else(|| VqlError::Input(format!("id {id} outside vocabulary")))?,
                ),
            }
        }
        Ok(out.join(" "))
    }

    /// One word per line; line `n` holds id `n + 4`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for w in &self.words {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(s: &str) -> Result<Self> {
        let words: Vec<&str> = s.lines().collect();
        let v = Self::from_words(words.iter().copied());
        if v.words.len() != words.len() {
            return Err(VqlError::Format("duplicate word in vocabulary file".into()));
        }
        if words.iter().any(|w| w.is_empty() || w.contains(char::is_whitespace)) {
            return Err(VqlError::Format("vocabulary entries must be single words".into()));
        }
        Ok(v)
    }
}
