use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::encounter::{chapter, is_valid_code, Encounter};
use crate::error::{Error, Result};

/// Ordered label set; the order defines probability-vector indexing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSpace {
    codes: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
}

impl LabelSpace {
    /// Builds a space sorted by code string.
    pub fn from_counts(counts: BTreeMap<String, usize>) -> Self {
        let (codes, counts): (Vec<_>, Vec<_>) = counts.into_iter().unzip();
        let index = codes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        Self { codes, counts, index }
    }

    /// Document frequency of every code across `encounters`.
    pub fn count_documents(encounters: &[Encounter]) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for e in encounters {
            for c in &e.codes {
                *counts.entry(c.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn from_encounters(encounters: &[Encounter]) -> Self {
        Self::from_counts(Self::count_documents(encounters))
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn code(&self, i: usize) -> &str {
        &self.codes[i]
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn train_count(&self, i: usize) -> usize {
        self.counts[i]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn chapter(&self, i: usize) -> &str {
        chapter(&self.codes[i])
    }

    /// Multi-hot target vector plus the number of codes outside the space.
    pub fn encode(&self, codes: &[String]) -> (Vec<f64>, usize) {
        let mut y = vec![0.0; self.len()];
        let mut unseen = 0;
        for c in codes {
            match self.index_of(c) {
                Some(i) => y[i] = 1.0,
                None => unseen += 1,
            }
        }
        (y, unseen)
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (c, n) in self.codes.iter().zip(&self.counts) {
            h.update(format!("{c}\t{n}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (c, n) in self.codes.iter().zip(&self.counts) {
            writeln!(out, "{c}\t{n}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let input = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut counts = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let (code, n) = line.split_once('\t').ok_or_else(|| err("expected code<TAB>count"))?;
            if !is_valid_code(code) {
                return Err(err("malformed code"));
            }
            let n = n.parse::<usize>().map_err(|_| err("bad count"))?;
            counts.push((code.to_string(), n));
        }
        let index: HashMap<String, usize> =
            counts.iter().enumerate().map(|(i, (c, _))| (c.clone(), i)).collect();
        if index.len() != counts.len() {
            return Err(Error::Invalid("duplicate code in label file".into()));
        }
        let (codes, counts) = counts.into_iter().unzip();
        Ok(Self { codes, counts, index })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_survives_save_and_load() {
        let mut c = BTreeMap::new();
        c.insert("I10".to_string(), 4);
        c.insert("E78.5".to_string(), 9);
        c.insert("A01.1".to_string(), 1);
        let space = LabelSpace::from_counts(c);
        assert_eq!(space.codes(), &["A01.1", "E78.5", "I10"]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.tsv");
        space.write(&p).unwrap();
        let back = LabelSpace::read(&p).unwrap();
        assert_eq!(back, space);
        assert_eq!(back.hash(), space.hash());
        assert_eq!(back.chapter(1), "E78");
        let (y, unseen) = back.encode(&["I10".into(), "Z00.0".into()]);
        assert_eq!(y, vec![0.0, 0.0, 1.0]);
        assert_eq!(unseen, 1);
    }
}
