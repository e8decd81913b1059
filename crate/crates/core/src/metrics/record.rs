use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::corpus::{Encounter, LabelSpace};
use crate::error::{Error, Result};

/// Model output for one encounter together with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    /// Probabilities in label-space order, each in `[0, 1]`.
    pub probs: Vec<f64>,
    /// Ranking scores when they differ from `probs` (unclamped reranker output).
    pub scores: Option<Vec<f64>>,
    /// Ground-truth label indices, ascending.
    pub gt: Vec<usize>,
    /// Ground-truth codes outside the label space; they are never predicted.
    pub unseen: usize,
    pub dept: String,
    pub first_visit: bool,
    /// Calendar year of the encounter, the period used by breakdowns.
    pub year: i32,
}

impl PredictionRecord {
    pub fn from_encounter(
        e: &Encounter,
        labels: &LabelSpace,
        probs: Vec<f64>,
        scores: Option<Vec<f64>>,
        first_visit: bool,
    ) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(Error::shape("prediction record", &[probs.len()], &[labels.len()]));
        }
        let mut gt = Vec::new();
        let mut unseen = 0;
        for c in &e.codes {
            match labels.index_of(c) {
                Some(i) => gt.push(i),
                None => unseen += 1,
            }
        }
        gt.sort_unstable();
        Ok(Self {
            id: record_id(e),
            probs,
            scores,
            gt,
            unseen,
            dept: e.dept.clone(),
            first_visit,
            year: e.date.year(),
        })
    }

    pub fn n_labels(&self) -> usize {
        self.probs.len()
    }

    /// Number of ground-truth codes, including unseen ones.
    pub fn gt_total(&self) -> usize {
        self.gt.len() + self.unseen
    }

    pub fn ranking(&self) -> &[f64] {
        self.scores.as_deref().unwrap_or(&self.probs)
    }

    pub fn is_gt(&self, label: usize) -> bool {
        self.gt.binary_search(&label).is_ok()
    }

    /// Labels ordered by score descending, ties by index ascending.
    pub fn ranked(&self) -> Vec<usize> {
        let s = self.ranking();
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        idx
    }

    pub fn predicted(&self, threshold: f64) -> Vec<usize> {
        crate::model::predict_set(&self.probs, threshold)
    }

    /// Checks the invariants a deserialized record must satisfy.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if let Some(p) = self.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(format!("probability {p} outside [0, 1]"));
        }
        if self.scores.as_ref().is_some_and(|s| s.len() != self.probs.len()) {
            return Err("scores and probs differ in length".into());
        }
        if self.gt.windows(2).any(|w| w[0] >= w[1]) || self.gt.last().is_some_and(|&l| l >= self.probs.len()) {
            return Err("ground-truth labels must be ascending and inside the label space".into());
        }
        Ok(())
    }
}

/// One JSON record per line.
pub fn write_records(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<PredictionRecord>> {
    let input = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let r: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        r.validate().map_err(|msg| Error::Validation { line: i + 1, msg })?;
        out.push(r);
    }
    Ok(out)
}

pub fn record_id(e: &Encounter) -> String {
    format!("{}/{}", e.patient_id, e.date)
}

/// Marks each encounter that is the earliest of its patient within the list.
pub fn first_visit_flags(encounters: &[Encounter]) -> Vec<bool> {
    let mut first: HashMap<&str, (chrono::NaiveDate, usize)> = HashMap::new();
    for (i, e) in encounters.iter().enumerate() {
        let entry = first.entry(e.patient_id.as_str()).or_insert((e.date, i));
        if e.date < entry.0 {
            *entry = (e.date, i);
        }
    }
    let firsts: std::collections::HashSet<usize> = first.values().map(|&(_, i)| i).collect();
    (0..encounters.len()).map(|i| firsts.contains(&i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_through_jsonl() {
        let recs = vec![
            PredictionRecord {
                id: "p1/2020-01-02".into(),
                probs: vec![0.1, 1.0 / 3.0, 0.0],
                scores: Some(vec![0.1, 1.0 / 3.0, -0.25]),
                gt: vec![0, 2],
                unseen: 1,
                dept: "d01".into(),
                first_visit: true,
                year: 2020,
            },
            PredictionRecord {
                id: "p2/2021-05-06".into(),
                probs: vec![0.9, 0.2, 0.7],
                scores: None,
                gt: vec![],
                unseen: 0,
                dept: "d02".into(),
                first_visit: false,
                year: 2021,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_records(&path, &recs).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
    }

    #[test]
    fn out_of_range_probability_is_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"probs\":[1.5],\"scores\":null,\"gt\":[],\"unseen\":0,\"dept\":\"d\",\"first_visit\":true,\"year\":2020}\n",
        )
        .unwrap();
        assert!(matches!(read_records(&path), Err(Error::Validation { line: 1, .. })));
    }
}
