use super::record::PredictionRecord;
use crate::error::{Error, Result};

/// Share of ground-truth codes among the `k` highest-ranked labels.
pub fn recall_at_k(r: &PredictionRecord, k: usize) -> Result<f64> {
    let total = r.gt_total();
    if total == 0 {
        return Err(Error::Undefined(format!("record {} has no ground truth", r.id)));
    }
    let hits = r.ranked().into_iter().take(k).filter(|&l| r.is_gt(l)).count();
    Ok(hits as f64 / total as f64)
}

/// Harmonic mean of precision and recall of one predicted set; empty predictions score 0.
pub fn instance_f1(pred: &[usize], gt: &[usize], unseen: usize) -> f64 {
    let tp = pred.iter().filter(|p| gt.contains(p)).count();
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / pred.len() as f64;
    let r = tp as f64 / (gt.len() + unseen) as f64;
    2.0 * p * r / (p + r)
}

pub fn record_f1(r: &PredictionRecord, threshold: f64) -> f64 {
    instance_f1(&r.predicted(threshold), &r.gt, r.unseen)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn f1(&self) -> Option<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        (denom > 0).then(|| 2.0 * self.tp as f64 / denom as f64)
    }

    pub fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Pooled counts over every (record, label) pair; unseen codes count as misses.
pub fn pooled_counts(records: &[PredictionRecord], threshold: f64) -> Counts {
    let mut c = Counts::default();
    for r in records {
        let pred = r.predicted(threshold);
        let tp = pred.iter().filter(|&&l| r.is_gt(l)).count();
        c.add(Counts {
            tp,
            fp: pred.len() - tp,
            fn_: r.gt_total() - tp,
        });
    }
    c
}

pub fn per_label_counts(records: &[PredictionRecord], threshold: f64) -> Vec<Counts> {
    let n = records.first().map_or(0, PredictionRecord::n_labels);
    let mut counts = vec![Counts::default(); n];
    for r in records {
        for (l, c) in counts.iter_mut().enumerate() {
            let p = r.probs[l] > threshold;
            match (p, r.is_gt(l)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    counts
}

pub fn micro_f1(records: &[PredictionRecord], threshold: f64) -> Result<f64> {
    pooled_counts(records, threshold)
        .f1()
        .ok_or_else(|| Error::Undefined("micro F1 without any positives".into()))
}

/// Mean per-label F1 over labels with at least one ground-truth positive.
pub fn macro_f1(records: &[PredictionRecord], threshold: f64) -> Result<f64> {
    let f1s: Vec<f64> = per_label_counts(records, threshold)
        .into_iter()
        .filter(|c| c.tp + c.fn_ > 0)
        .filter_map(|c| c.f1())
        .collect();
    if f1s.is_empty() {
        return Err(Error::Undefined("macro F1 without any positive label".into()));
    }
    Ok(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

/// ROC AUC by the rank statistic with average ranks for ties. `None` if one class is missing.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Micro AUC over all (record, label) pairs; unseen codes enter as positives scored below everything.
pub fn auc_micro(records: &[PredictionRecord]) -> Result<f64> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for r in records {
        for (l, &s) in r.ranking().iter().enumerate() {
            scores.push(s);
            labels.push(r.is_gt(l));
        }
        for _ in 0..r.unseen {
            scores.push(f64::NEG_INFINITY);
            labels.push(true);
        }
    }
    auc(&scores, &labels).ok_or_else(|| Error::Undefined("micro AUC needs positives and negatives".into()))
}

/// Mean per-label AUC over labels with both classes present.
pub fn auc_macro(records: &[PredictionRecord]) -> Result<f64> {
    let n = records.first().map_or(0, PredictionRecord::n_labels);
    let mut vals = Vec::new();
    for l in 0..n {
        let scores: Vec<f64> = records.iter().map(|r| r.ranking()[l]).collect();
        let labels: Vec<bool> = records.iter().map(|r| r.is_gt(l)).collect();
        if let Some(a) = auc(&scores, &labels) {
            vals.push(a);
        }
    }
    if vals.is_empty() {
        return Err(Error::Undefined("no label has both classes".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}
