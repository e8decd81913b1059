use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::ranking::{per_label_counts, pooled_counts, recall_at_k, record_f1, Counts};
use super::record::PredictionRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    Dept,
    LabelFrequency,
    FirstVisit,
}

impl std::str::FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dept" => Ok(Self::Dept),
            "label_frequency" => Ok(Self::LabelFrequency),
            "first_visit" => Ok(Self::FirstVisit),
            other => Err(Error::Config(format!("unknown breakdown key {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRow {
    pub group: String,
    /// Records in the group, or ground-truth occurrences for label-frequency buckets.
    pub size: usize,
    pub recall_at_k: f64,
    pub instance_f1: Option<f64>,
    pub counts: Counts,
    pub distinct_labels: usize,
    /// Distinct ground-truth labels per calendar year, averaged over the years present.
    pub labels_per_period: f64,
}

fn per_period(by_year: &BTreeMap<i32, BTreeSet<usize>>) -> f64 {
    if by_year.is_empty() {
        return 0.0;
    }
    by_year.values().map(BTreeSet::len).sum::<usize>() as f64 / by_year.len() as f64
}

/// Default upper edges of the label-frequency buckets (train document counts).
pub const DEFAULT_BUCKETS: [usize; 3] = [5, 20, 100];

fn bucket_name(count: usize, edges: &[usize]) -> String {
    let mut lo = 0;
    for &hi in edges {
        if count <= hi {
            return format!("{lo}-{hi}");
        }
        lo = hi + 1;
    }
    format!("{lo}+")
}

pub fn breakdown(
    records: &[PredictionRecord],
    key: GroupKey,
    k: usize,
    threshold: f64,
    train_counts: &[usize],
    edges: &[usize],
) -> Result<Vec<GroupRow>> {
    let mut rows = match key {
        GroupKey::Dept => by_record(records, k, threshold, |r| r.dept.clone())?,
        GroupKey::FirstVisit => by_record(records, k, threshold, |r| {
            if r.first_visit { "first" } else { "recurring" }.to_string()
        })?,
        GroupKey::LabelFrequency => by_label(records, k, threshold, train_counts, edges)?,
    };
    rows.sort_by(|a, b| b.size.cmp(&a.size).then_with(|| a.group.cmp(&b.group)));
    Ok(rows)
}

fn by_record(
    records: &[PredictionRecord],
    k: usize,
    threshold: f64,
    key: impl Fn(&PredictionRecord) -> String,
) -> Result<Vec<GroupRow>> {
    let mut groups: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(key(r)).or_default().push(r.clone());
    }
    let mut rows = Vec::new();
    for (group, recs) in groups {
        let n = recs.len() as f64;
        let mut recall = 0.0;
        for r in &recs {
            recall += recall_at_k(r, k)?;
        }
        let labels: BTreeSet<usize> = recs.iter().flat_map(|r| r.gt.iter().copied()).collect();
        let mut by_year: BTreeMap<i32, BTreeSet<usize>> = BTreeMap::new();
        for r in &recs {
            by_year.entry(r.year).or_default().extend(r.gt.iter().copied());
        }
        rows.push(GroupRow {
            group,
            size: recs.len(),
            recall_at_k: recall / n,
            instance_f1: Some(recs.iter().map(|r| record_f1(r, threshold)).sum::<f64>() / n),
            counts: pooled_counts(&recs, threshold),
            distinct_labels: labels.len(),
            labels_per_period: per_period(&by_year),
        });
    }
    Ok(rows)
}

fn by_label(
    records: &[PredictionRecord],
    k: usize,
    threshold: f64,
    train_counts: &[usize],
    edges: &[usize],
) -> Result<Vec<GroupRow>> {
    let n = records.first().map_or(0, PredictionRecord::n_labels);
    if train_counts.len() != n {
        return Err(Error::shape("label frequency breakdown", &[train_counts.len()], &[n]));
    }
    let bucket: Vec<String> = train_counts.iter().map(|&c| bucket_name(c, edges)).collect();
    let per_label = per_label_counts(records, threshold);
    #[derive(Default)]
    struct Acc {
        occurrences: usize,
        hits: usize,
        counts: Counts,
        labels: BTreeSet<usize>,
        by_year: BTreeMap<i32, BTreeSet<usize>>,
    }
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    for r in records {
        let top: BTreeSet<usize> = r.ranked().into_iter().take(k).collect();
        for &l in &r.gt {
            let a = acc.entry(bucket[l].clone()).or_default();
            a.occurrences += 1;
            a.hits += usize::from(top.contains(&l));
            a.labels.insert(l);
            a.by_year.entry(r.year).or_default().insert(l);
        }
        if r.unseen > 0 {
            let a = acc.entry("unseen".into()).or_default();
            a.occurrences += r.unseen;
            a.counts.fn_ += r.unseen;
        }
    }
    for (l, c) in per_label.into_iter().enumerate() {
        if c.tp + c.fp + c.fn_ > 0 {
            acc.entry(bucket[l].clone()).or_default().counts.add(c);
        }
    }
    Ok(acc
        .into_iter()
        .filter(|(_, a)| a.occurrences > 0)
        .map(|(group, a)| GroupRow {
            group,
            size: a.occurrences,
            recall_at_k: a.hits as f64 / a.occurrences as f64,
            instance_f1: None,
            counts: a.counts,
            distinct_labels: a.labels.len(),
            labels_per_period: per_period(&a.by_year),
        })
        .collect())
}

pub fn breakdown_csv(rows: &[GroupRow]) -> String {
    let mut s = String::from("group,size,recall_at_k,instance_f1,micro_f1,distinct_labels,labels_per_period\n");
    for r in rows {
        let f = |v: Option<f64>| v.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{:.2},{},{},{},{:.2}",
            r.group,
            r.size,
            100.0 * r.recall_at_k,
            f(r.instance_f1),
            f(r.counts.f1()),
            r.distinct_labels,
            r.labels_per_period
        );
    }
    s
}
