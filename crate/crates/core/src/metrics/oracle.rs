use super::record::PredictionRecord;
use crate::error::{Error, Result};

/// Recall@k of a scorer that ranks exactly the ground-truth labels with at least `min_count`
/// training occurrences first. Unseen codes have a training count of zero.
pub fn oracle_recall(records: &[PredictionRecord], train_counts: &[usize], min_count: usize, k: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Undefined("no records".into()));
    }
    let mut total = 0.0;
    for r in records {
        if r.gt_total() == 0 {
            return Err(Error::Undefined(format!("record {} has no ground truth", r.id)));
        }
        let mut frequent = r.gt.iter().filter(|&&l| train_counts[l] >= min_count).count();
        if min_count == 0 {
            frequent += r.unseen;
        }
        total += frequent.min(k) as f64 / r.gt_total() as f64;
    }
    Ok(total / records.len() as f64)
}
