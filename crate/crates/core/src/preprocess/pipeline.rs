use std::fmt::Write as _;

use super::dedup::{dedup_corpus, DedupMode};
use super::filter::filter_min_frequency;
use super::vocab::{build_vocab, Vocabulary, DEFAULT_MAX_LEN};
use crate::corpus::{corpus_stats, CorpusStats, Encounter, LabelSpace, Split};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct PrepConfig {
    pub dedup_train: bool,
    pub dedup_mode: DedupMode,
    pub min_label_count: usize,
    pub min_token_count: usize,
    pub max_len: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            dedup_train: true,
            dedup_mode: DedupMode::Consecutive,
            min_label_count: 1,
            min_token_count: 1,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepReport {
    /// Steps applied to the train set, in order.
    pub order: Vec<String>,
    pub stages: Vec<(String, CorpusStats)>,
    pub labels: usize,
    pub vocab: usize,
}

impl PrepReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("train steps: {}\n", self.order.join(" -> "));
        let _ = writeln!(s, "labels: {}\nvocabulary: {}", self.labels, self.vocab);
        for (name, st) in &self.stages {
            let _ = writeln!(s, "\n[{name}]\n{st}");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,documents,patients,distinct_codes,mean_chars,mean_codes,unseen_pct\n");
        for (name, st) in &self.stages {
            let unseen = st.unseen_code_pct.map(|p| format!("{p:.4}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{name},{},{},{},{:.4},{:.4},{unseen}",
                st.documents, st.patients, st.distinct_codes, st.mean_text_chars, st.mean_codes
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train: Vec<Encounter>,
    pub dev: Vec<Encounter>,
    pub test: Vec<Encounter>,
    pub labels: LabelSpace,
    pub vocab: Vocabulary,
    pub report: PrepReport,
}

/// Text the vocabulary and the auxiliary encoder see for an encounter's meds and procs.
pub fn aux_text(e: &Encounter) -> String {
    e.meds.iter().chain(&e.procs).cloned().collect::<Vec<_>>().join(" ")
}

/// Train: optional dedup, then min-frequency filtering. Dev and test: dedup only.
pub fn prepare(split: &Split, cfg: &PrepConfig) -> Result<Prepared> {
    let mut order = Vec::new();
    let mut stages = vec![("train raw".to_string(), corpus_stats(&split.train, None))];
    let mut train = split.train.clone();
    if cfg.dedup_train {
        train = dedup_corpus(&train, cfg.dedup_mode);
        order.push(format!("dedup({})", cfg.dedup_mode));
        stages.push(("train dedup".into(), corpus_stats(&train, None)));
    }
    let (train, labels) = filter_min_frequency(&train, cfg.min_label_count);
    order.push(format!("min_frequency({})", cfg.min_label_count));
    debug_assert!(order.last().is_some_and(|s| s.starts_with("min_frequency")));
    stages.push(("train final".into(), corpus_stats(&train, None)));

    let dev = dedup_corpus(&split.dev, cfg.dedup_mode);
    let test = dedup_corpus(&split.test, cfg.dedup_mode);
    stages.push(("dev".into(), corpus_stats(&dev, Some(&train))));
    stages.push(("test".into(), corpus_stats(&test, Some(&train))));

    let aux: Vec<String> = train.iter().map(aux_text).collect();
    let vocab = build_vocab(
        train.iter().map(|e| e.text.as_str()).chain(aux.iter().map(String::as_str)),
        cfg.min_token_count,
    )?;
    let report = PrepReport {
        order,
        stages,
        labels: labels.len(),
        vocab: vocab.len(),
    };
    Ok(Prepared {
        train,
        dev,
        test,
        labels,
        vocab,
        report,
    })
}
