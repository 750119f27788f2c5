// SPDX-License-Identifier: MIT OR Apache-2.0

//! Lowercasing word-level tokenizer.
//!
//! A token is either a special (`<bos>`, `<eos>`, `<unk>`, `<pad>`, ids 0-3),
//! a maximal run of alphanumeric characters, or a single other
//! non-whitespace character.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::checkpoint::write_atomic;
use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const PAD: usize = 3;
pub const SPECIALS: [&str; 4] = ["<bos>", "<eos>", "<unk>", "<pad>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

/// Split text into token strings (lowercased).
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        if SPECIALS.contains(&piece) {
            out.push(piece.to_string());
            continue;
        }
        let mut word = String::new();
        for ch in piece.chars() {
            if ch.is_alphanumeric() {
                word.extend(ch.to_lowercase());
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_lowercase().collect());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

impl Tokenizer {
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut lines = 0;
        for line in corpus {
            lines += 1;
            for w in split_words(line) {
                if !SPECIALS.contains(&w.as_str()) {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        if lines == 0 {
            return Err(Error::InvalidArgument("cannot build a tokenizer from an empty corpus".into()));
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::InvalidArgument(
                "vocabulary must start with <bos>, <eos>, <unk>, <pad>".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid token at line {}", i + 1)));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids for `text`, without BOS/EOS. Unknown words map to UNK.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_words(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect()
    }

    /// `<bos>` followed by the ids of `text`; words outside the vocabulary
    /// are an error rather than UNK.
    pub fn encode_prompt(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = vec![BOS];
        for w in split_words(text) {
            let id = self
                .id(&w)
                .ok_or_else(|| Error::InvalidArgument(format!("word {w:?} is not in the vocabulary")))?;
            ids.push(id);
        }
        Ok(ids)
    }

    /// Token strings joined by single spaces.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(SPECIALS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Vocab file contents: one token per line, line number = id.
    pub fn to_vocab_file(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_vocab_file(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(String::from).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_vocab_file().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_vocab_file(&text)
    }

    /// SHA-256 of the vocab file contents, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_vocab_file().as_bytes()))
    }
}
