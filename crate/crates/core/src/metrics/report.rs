use std::fmt::Write as _;

use super::ranking::{auc_macro, auc_micro, macro_f1, micro_f1, recall_at_k, record_f1};
use super::record::PredictionRecord;
use crate::error::{Error, Result};

/// Headline evaluation numbers, each in `[0, 1]`; `None` where undefined on the given records.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub records: usize,
    pub k: usize,
    pub auc_macro: Option<f64>,
    pub auc_micro: Option<f64>,
    pub f1_macro: Option<f64>,
    pub f1_micro: Option<f64>,
    pub f1_instance: f64,
    pub recall_at_k: f64,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn mean_recall_at_k(records: &[PredictionRecord], k: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Undefined("no records".into()));
    }
    let mut s = 0.0;
    for r in records {
        s += recall_at_k(r, k)?;
    }
    Ok(s / records.len() as f64)
}

pub fn mean_instance_f1(records: &[PredictionRecord], threshold: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Undefined("no records".into()));
    }
    Ok(records.iter().map(|r| record_f1(r, threshold)).sum::<f64>() / records.len() as f64)
}

pub fn evaluate(records: &[PredictionRecord], k: usize, threshold: f64) -> Result<MetricsReport> {
    Ok(MetricsReport {
        records: records.len(),
        k,
        auc_macro: defined(auc_macro(records))?,
        auc_micro: defined(auc_micro(records))?,
        f1_macro: defined(macro_f1(records, threshold))?,
        f1_micro: defined(micro_f1(records, threshold))?,
        f1_instance: mean_instance_f1(records, threshold)?,
        recall_at_k: mean_recall_at_k(records, k)?,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "records,auc_macro,auc_micro,f1_macro,f1_micro,f1_instance,recall_at_k";

    /// One CSV row, values scaled by 100.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.records,
            pct(self.auc_macro),
            pct(self.auc_micro),
            pct(self.f1_macro),
            pct(self.f1_micro),
            pct(Some(self.f1_instance)),
            pct(Some(self.recall_at_k))
        )
    }

    pub fn to_table(&self, name: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "model",
            "AUC-mac",
            "AUC-mic",
            "F1-mac",
            "F1-mic",
            "F1-inst",
            format!("R@{}", self.k)
        );
        let _ = writeln!(
            s,
            "{:<16} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            name,
            pct(self.auc_macro),
            pct(self.auc_micro),
            pct(self.f1_macro),
            pct(self.f1_micro),
            pct(Some(self.f1_instance)),
            pct(Some(self.recall_at_k))
        );
        s
    }
}
