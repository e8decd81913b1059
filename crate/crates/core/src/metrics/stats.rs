use super::ranking::{recall_at_k, record_f1};
use super::record::PredictionRecord;
use crate::error::{Error, Result};

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Invalid(format!(
            "spearman needs two equal-length series of at least 2 values, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("spearman of a constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub counts: Vec<usize>,
    pub exact_one_fraction: f64,
}

/// Equal-width bins on `[0, 1]`: half-open except the last, which is closed.
pub fn score_histogram(scores: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0; bins];
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Invalid(format!("score {s} outside [0, 1]")));
        }
        let b = ((s * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    let ones = scores.iter().filter(|&&s| s == 1.0).count();
    Ok(Histogram {
        counts,
        exact_one_fraction: if scores.is_empty() { 0.0 } else { ones as f64 / scores.len() as f64 },
    })
}

/// Per-record score summarized by [`metric_histogram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordMetric {
    InstanceF1,
    RecallAt5,
}

/// Histogram of a per-record metric over records.
pub fn metric_histogram(
    records: &[PredictionRecord],
    metric: RecordMetric,
    bins: usize,
    threshold: f64,
) -> Result<Histogram> {
    let scores = records
        .iter()
        .map(|r| match metric {
            RecordMetric::InstanceF1 => Ok(record_f1(r, threshold)),
            RecordMetric::RecallAt5 => recall_at_k(r, 5),
        })
        .collect::<Result<Vec<f64>>>()?;
    score_histogram(&scores, bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Undefined(_))));
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_with_ties_matches_definition() {
        // ranks x: [1, 2.5, 2.5, 4, 5], y: [2, 1, 4, 4, 4]
        let x = [1.0, 2.0, 2.0, 3.0, 4.0];
        let y = [5.0, 1.0, 7.0, 7.0, 7.0];
        let rx = [1.0, 2.5, 2.5, 4.0, 5.0];
        let ry = [2.0, 1.0, 4.0, 4.0, 4.0];
        let mean = 3.0;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mean) * (b - mean)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mean) * (a - mean)).sum();
        let vy: f64 = ry.iter().map(|b| (b - mean) * (b - mean)).sum();
        let want = cov / (vx * vy).sqrt();
        assert!((spearman(&x, &y).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn histogram_examples() {
        let h = score_histogram(&[1.0, 1.0, 1.0], 10).unwrap();
        assert_eq!(h.counts[9], 3);
        assert_eq!(h.exact_one_fraction, 1.0);
        let h = score_histogram(&[0.0, 0.5, 1.0], 10).unwrap();
        assert_eq!((h.counts[0], h.counts[5], h.counts[9]), (1, 1, 1));
        assert_eq!(h.counts.iter().sum::<usize>(), 3);
        assert!(score_histogram(&[0.5], 0).is_err());
    }
}
