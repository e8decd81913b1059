use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const DEFAULT_MAX_LEN: usize = 512;

const RESERVED: [&str; 2] = ["<pad>", "<unk>"];

/// Lowercased alphanumeric runs.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::Invalid("duplicate vocabulary entry".into()));
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let input = std::io::BufReader::new(std::fs::File::open(path)?);
        let tokens = input.lines().collect::<std::io::Result<Vec<_>>>()?;
        if tokens.len() < 2 || tokens[..2] != RESERVED {
            return Err(Error::Parse {
                line: 1,
                msg: "vocabulary must start with the reserved tokens".into(),
            });
        }
        Self::from_tokens(tokens)
    }
}

/// Tokens with at least `min_count` occurrences, most frequent first, ties alphabetical.
pub fn build_vocab<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::Config("min_token_count must be at least 1".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for w in words(text) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, n)| *n >= min_count && !RESERVED.contains(&w.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(w, _)| w))
        .collect();
    Vocabulary::from_tokens(tokens)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedNote {
    pub ids: Vec<usize>,
}

pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenizedNote {
    let mut ids: Vec<usize> = words(text)
        .take(max_len)
        .map(|w| vocab.id(&w).unwrap_or(UNK))
        .collect();
    if ids.is_empty() {
        ids.push(PAD);
    }
    TokenizedNote { ids }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_order_after_reserved() {
        let v = build_vocab(["a a b"], 1).unwrap();
        assert_eq!(v.id("a"), Some(2));
        assert_eq!(v.id("b"), Some(3));
        assert_eq!(v.len(), 4);
        let again = build_vocab(["a a b"], 1).unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn ties_are_alphabetical_and_case_folded() {
        let v = build_vocab(["Zeta, alpha; beta"], 1).unwrap();
        assert_eq!(&v.tokens[2..], &["alpha", "beta", "zeta"]);
    }

    #[test]
    fn min_count_prunes() {
        let v = build_vocab(["one two three"], 5).unwrap();
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn tokenize_cases() {
        let v = build_vocab(["known"], 1).unwrap();
        assert_eq!(tokenize("", &v, 512).ids, vec![PAD]);
        assert_eq!(tokenize("xyzzy", &v, 512).ids, vec![UNK]);
        let long = vec!["known"; 600].join(" ");
        let t = tokenize(&long, &v, 512);
        assert_eq!(t.ids.len(), 512);
        assert!(t.ids.iter().all(|&i| i == 2));
    }

    #[test]
    fn save_and_load() {
        let v = build_vocab(["b a a c"], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.write(&p).unwrap();
        let back = Vocabulary::read(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
    }
}
