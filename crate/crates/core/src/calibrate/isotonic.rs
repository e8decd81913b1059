use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::PredictionRecord;

/// One constant piece of a fitted step function, covering raw values `[lo, hi]` of the fit data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
    pub weight: f64,
}

/// Weighted least-squares non-decreasing fit by pool-adjacent-violators.
/// Points with equal `x` are pooled before fitting.
pub fn pav(points: &[(f64, f64, f64)]) -> Result<Vec<Block>> {
    if points.iter().any(|&(x, y, w)| !x.is_finite() || !y.is_finite() || w.is_nan() || w <= 0.0) {
        return Err(Error::Invalid("isotonic fit needs finite values and positive weights".into()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut pooled: Vec<Block> = Vec::with_capacity(sorted.len());
    for &(x, y, w) in &sorted {
        let point = Block { lo: x, hi: x, value: y, weight: w };
        match pooled.last_mut() {
            Some(b) if b.hi == x => merge(b, &point),
            _ => pooled.push(point),
        }
    }
    let mut blocks: Vec<Block> = Vec::with_capacity(pooled.len());
    for point in pooled {
        blocks.push(point);
        while blocks.len() > 1 && blocks[blocks.len() - 2].value > blocks[blocks.len() - 1].value {
            let last = blocks.pop().expect("len > 1");
            merge(blocks.last_mut().expect("len > 0"), &last);
        }
    }
    Ok(blocks)
}

fn merge(into: &mut Block, other: &Block) {
    let w = into.weight + other.weight;
    into.value = (into.value * into.weight + other.value * other.weight) / w;
    into.weight = w;
    into.lo = into.lo.min(other.lo);
    into.hi = into.hi.max(other.hi);
}

/// Piecewise-constant monotone map from raw to calibrated probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicFit {
    pub blocks: Vec<Block>,
}

impl IsotonicFit {
    /// Value of the last block starting at or below `p`; the first block below the fitted range.
    pub fn apply(&self, p: f64) -> f64 {
        let i = self.blocks.partition_point(|b| b.lo <= p);
        self.blocks[i.saturating_sub(1)].value.clamp(0.0, 1.0)
    }
}

/// Label-wise calibration; labels without a dev positive keep their raw probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    pub fits: Vec<Option<IsotonicFit>>,
}

impl IsotonicMap {
    pub fn apply(&self, label: usize, p: f64) -> f64 {
        match &self.fits[label] {
            Some(f) => f.apply(p),
            None => p,
        }
    }

    pub fn calibrate(&self, r: &PredictionRecord) -> Result<PredictionRecord> {
        if r.n_labels() != self.fits.len() {
            return Err(Error::shape("calibrate", &[r.n_labels()], &[self.fits.len()]));
        }
        let probs = r.probs.iter().enumerate().map(|(l, &p)| self.apply(l, p)).collect();
        Ok(PredictionRecord { probs, ..r.clone() })
    }

    pub fn calibrate_all(&self, records: &[PredictionRecord]) -> Result<Vec<PredictionRecord>> {
        records.iter().map(|r| self.calibrate(r)).collect()
    }

    pub fn identity_labels(&self) -> usize {
        self.fits.iter().filter(|f| f.is_none()).count()
    }
}

pub fn fit_isotonic(records: &[PredictionRecord]) -> Result<IsotonicMap> {
    let n = records.first().map_or(0, PredictionRecord::n_labels);
    let mut fits = Vec::with_capacity(n);
    for l in 0..n {
        if !records.iter().any(|r| r.is_gt(l)) {
            fits.push(None);
            continue;
        }
        let pts: Vec<(f64, f64, f64)> = records
            .iter()
            .map(|r| (r.probs[l], if r.is_gt(l) { 1.0 } else { 0.0 }, 1.0))
            .collect();
        fits.push(Some(IsotonicFit { blocks: pav(&pts)? }));
    }
    Ok(IsotonicMap { fits })
}

/// Expected calibration error of one label over equal-width bins.
pub fn ece(records: &[PredictionRecord], label: usize, bins: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Undefined("ECE without observations".into()));
    }
    if bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    let mut conf = vec![0.0; bins];
    let mut hits = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for r in records {
        let p = r.probs[label];
        let b = ((p * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        conf[b] += p;
        hits[b] += if r.is_gt(label) { 1.0 } else { 0.0 };
        count[b] += 1;
    }
    let n = records.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (conf[b] - hits[b]).abs() / n)
        .sum())
}

pub const ECE_BINS: usize = 10;

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(p: f64, y: bool) -> PredictionRecord {
        PredictionRecord {
            id: String::new(),
            probs: vec![p],
            scores: None,
            gt: if y { vec![0] } else { vec![] },
            unseen: 0,
            dept: String::new(),
            first_visit: false,
            year: 2020,
        }
    }

    #[test]
    fn violating_pair_pools_to_mean() {
        let b = pav(&[(0.2, 1.0, 1.0), (0.4, 0.0, 1.0)]).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].value, 0.5);
    }

    #[test]
    fn monotone_outcomes_give_level_means() {
        let b = pav(&[(0.1, 0.0, 1.0), (0.1, 1.0, 1.0), (0.5, 1.0, 1.0), (0.9, 1.0, 1.0)]).unwrap();
        let v: Vec<f64> = b.iter().map(|b| b.value).collect();
        assert_eq!(v, [0.5, 1.0, 1.0]);
    }

    #[test]
    fn all_positive_is_constant_one() {
        let recs: Vec<_> = [0.1, 0.4, 0.8].iter().map(|&p| rec(p, true)).collect();
        let m = fit_isotonic(&recs).unwrap();
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(m.apply(0, p), 1.0);
        }
    }

    #[test]
    fn unobserved_label_is_identity() {
        let recs: Vec<_> = [0.1, 0.4].iter().map(|&p| rec(p, false)).collect();
        let m = fit_isotonic(&recs).unwrap();
        assert_eq!(m.identity_labels(), 1);
        assert_eq!(m.apply(0, 0.37), 0.37);
    }

    #[test]
    fn apply_clamps_and_steps() {
        let f = IsotonicFit {
            blocks: vec![
                Block { lo: 0.2, hi: 0.3, value: 0.1, weight: 1.0 },
                Block { lo: 0.6, hi: 0.7, value: 0.8, weight: 1.0 },
            ],
        };
        assert_eq!(f.apply(0.0), 0.1);
        assert_eq!(f.apply(0.5), 0.1);
        assert_eq!(f.apply(0.6), 0.8);
        assert_eq!(f.apply(1.0), 0.8);
    }

    #[test]
    fn ece_examples() {
        let half: Vec<_> = (0..10).map(|i| rec(0.5, i % 2 == 0)).collect();
        assert_eq!(ece(&half, 0, 10).unwrap(), 0.0);
        let sure: Vec<_> = (0..4).map(|_| rec(1.0, false)).collect();
        assert_eq!(ece(&sure, 0, 10).unwrap(), 1.0);
    }

    #[test]
    fn ece_six_point_toy() {
        let pts = [(0.05, false), (0.15, true), (0.12, false), (0.55, true), (0.58, false), (0.95, true)];
        let recs: Vec<_> = pts.iter().map(|&(p, y)| rec(p, y)).collect();
        // bins: [0.0,0.1): {0.05:0}; [0.1,0.2): {0.15:1, 0.12:0}; [0.5,0.6): {0.55:1, 0.58:0}; [0.9,1]: {0.95:1}
        let want = (0.05f64 - 0.0).abs() / 6.0
            + (0.27f64 - 1.0).abs() / 6.0
            + (1.13f64 - 1.0).abs() / 6.0
            + (0.95f64 - 1.0).abs() / 6.0;
        assert!((ece(&recs, 0, 10).unwrap() - want).abs() < 1e-12);
    }
}
