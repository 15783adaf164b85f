//! Tokenization and vocabularies.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
/// Separator appended after every resource triple.
pub const SEP: &str = "#";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
pub const SEP_ID: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    /// CJK characters become single tokens; other text splits on whitespace
    /// with punctuation peeled off.
    #[default]
    Mixed,
    /// Whitespace only.
    Whitespace,
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2FA1F
        | 0x3000..=0x303F | 0xFF00..=0xFFEF)
}

pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<String> {
    match mode {
        TokenizerMode::Whitespace => text.split_whitespace().map(str::to_lowercase).collect(),
        TokenizerMode::Mixed => {
            let mut out = Vec::new();
            let mut word = String::new();
            let flush = |word: &mut String, out: &mut Vec<String>| {
                if !word.is_empty() {
                    out.push(std::mem::take(word).to_lowercase());
                }
            };
            for c in text.chars() {
                if c.is_whitespace() {
                    flush(&mut word, &mut out);
                } else if is_cjk(c) || (c.is_ascii_punctuation() && !matches!(c, '_' | '#' | '\'' | '-')) {
                    flush(&mut word, &mut out);
                    out.push(c.to_string());
                } else {
                    word.push(c);
                }
            }
            flush(&mut word, &mut out);
            out
        }
    }
}

/// Joins tokens back into display text.
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let cjk = tok.chars().next().is_some_and(is_cjk);
        let prev_cjk = out.chars().last().is_some_and(is_cjk);
        if !out.is_empty() && !(cjk && prev_cjk) {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// Vocabulary holding only the special tokens.
    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [PAD, UNK, BOS, EOS, SEP] {
            v.insert(t);
        }
        v
    }

    /// Builds a vocabulary from token streams, keeping tokens seen at least
    /// `min_count` times. Order is first occurrence, so the result is
    /// deterministic for a fixed input order.
    pub fn build<'a, I, S>(sequences: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a String>,
    {
        let mut counts: HashMap<&String, usize> = HashMap::new();
        let mut order = Vec::new();
        for seq in sequences {
            for tok in seq {
                let c = counts.entry(tok).or_insert(0);
                if *c == 0 {
                    order.push(tok);
                }
                *c += 1;
            }
        }
        let mut v = Vocabulary::new();
        for tok in order {
            if counts[tok] >= min_count {
                v.insert(tok);
            }
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let expected = [PAD, UNK, BOS, EOS, SEP];
        if tokens.len() < expected.len() || tokens[..expected.len()] != expected {
            return Err(Error::Schema("vocabulary must start with the special tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
