use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{record_f1, PredictionRecord};

use super::isotonic::IsotonicMap;

/// Which split a rule's thresholds were fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Dev,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub t_u: f64,
    pub t_l: f64,
    pub decision_threshold: f64,
    pub provenance: Provenance,
    /// Rejects every record; returned when no grid point meets the budget.
    pub reject_all: bool,
}

impl ThresholdRule {
    pub fn new(t_u: f64, t_l: f64, decision_threshold: f64) -> Result<Self> {
        for (name, v) in [("t_u", t_u), ("t_l", t_l), ("decision_threshold", decision_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(Self { t_u, t_l, decision_threshold, provenance: Provenance::Dev, reject_all: false })
    }
}

/// Accept a record when every predicted label has `p ≥ t_u` and every other label has `p ≤ t_l`.
/// An empty predicted set is never accepted.
pub fn decide_exact_match(r: &PredictionRecord, rule: &ThresholdRule) -> bool {
    !rule.reject_all && Summary::of(r, rule.decision_threshold).accepts(rule.t_u, rule.t_l)
}

/// What a rule needs to know about one record.
#[derive(Debug, Clone, Copy)]
struct Summary {
    min_pred: Option<f64>,
    max_rest: f64,
    exact: bool,
}

impl Summary {
    fn of(r: &PredictionRecord, threshold: f64) -> Self {
        let mut min_pred: Option<f64> = None;
        let mut max_rest = f64::NEG_INFINITY;
        for &p in &r.probs {
            if p > threshold {
                min_pred = Some(min_pred.map_or(p, |m| m.min(p)));
            } else {
                max_rest = max_rest.max(p);
            }
        }
        Self { min_pred, max_rest, exact: record_f1(r, threshold) == 1.0 }
    }

    fn accepts(&self, t_u: f64, t_l: f64) -> bool {
        self.min_pred.is_some_and(|m| m >= t_u) && self.max_rest <= t_l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutomationResult {
    pub selected: Vec<String>,
    /// Selected records whose predicted set matches the ground truth exactly.
    pub tp: usize,
    pub fp: usize,
    pub fp_rate: f64,
}

fn tally<'a>(records: impl Iterator<Item = (&'a PredictionRecord, bool, bool)>) -> AutomationResult {
    let mut selected = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (r, chosen, exact) in records {
        if chosen {
            selected.push(r.id.clone());
            if exact {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    AutomationResult { fp_rate: fp as f64 / selected.len().max(1) as f64, selected, tp, fp }
}

pub fn automate(records: &[PredictionRecord], rule: &ThresholdRule) -> AutomationResult {
    tally(records.iter().map(|r| {
        let s = Summary::of(r, rule.decision_threshold);
        (r, !rule.reject_all && s.accepts(rule.t_u, rule.t_l), s.exact)
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub rule: ThresholdRule,
    pub result: AutomationResult,
    /// The returned rule selects no dev record: either no grid point selects anything or
    /// every grid point that does exceeds the budget.
    pub nothing_selected: bool,
}

pub const GRID_STEPS: usize = 20;

pub fn grid_value(i: usize) -> f64 {
    i as f64 / GRID_STEPS as f64
}

/// Exhaustive search over `t_u, t_l ∈ {0, 0.05, …, 1}`. Among rules with dev
/// false-positive rate ≤ `max_fp`, maximizes true positives; ties prefer a lower
/// false-positive rate, then a higher `t_u`, then a lower `t_l`.
pub fn search_thresholds(dev: &[PredictionRecord], max_fp: f64, decision_threshold: f64) -> Result<SearchOutcome> {
    if !(max_fp > 0.0 && max_fp <= 1.0) {
        return Err(Error::Config(format!("max_fp must lie in (0, 1], got {max_fp}")));
    }
    let summaries: Vec<Summary> = dev.iter().map(|r| Summary::of(r, decision_threshold)).collect();
    let mut best: Option<(usize, usize, f64, usize, usize)> = None; // (tp, fp, rate, iu, il)
    let mut any_selected = false;
    for iu in 0..=GRID_STEPS {
        for il in 0..=GRID_STEPS {
            let (t_u, t_l) = (grid_value(iu), grid_value(il));
            let (mut tp, mut fp) = (0, 0);
            for s in &summaries {
                if s.accepts(t_u, t_l) {
                    if s.exact {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            any_selected |= tp + fp > 0;
            let rate = fp as f64 / (tp + fp).max(1) as f64;
            if rate > max_fp {
                continue;
            }
            let better = match best {
                None => true,
                Some((btp, _, brate, biu, bil)) => {
                    (tp, std::cmp::Reverse(rate.to_bits()), iu, std::cmp::Reverse(il))
                        > (btp, std::cmp::Reverse(brate.to_bits()), biu, std::cmp::Reverse(bil))
                }
            };
            if better {
                best = Some((tp, fp, rate, iu, il));
            }
        }
    }
    let rule = match best {
        Some((_, _, _, iu, il)) => ThresholdRule::new(grid_value(iu), grid_value(il), decision_threshold)?,
        // Records at exactly 1 and 0 pass every grid rule.
        None => ThresholdRule { reject_all: true, ..ThresholdRule::new(1.0, 0.0, decision_threshold)? },
    };
    let result = tally(
        dev.iter()
            .zip(&summaries)
            .map(|(r, s)| (r, !rule.reject_all && s.accepts(rule.t_u, rule.t_l), s.exact)),
    );
    let nothing_selected = !any_selected || result.selected.is_empty();
    Ok(SearchOutcome { rule, result, nothing_selected })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutomationReport {
    pub result: AutomationResult,
    /// Test records whose predicted set is exact.
    pub possible: usize,
    /// `tp / possible`, zero when nothing is possible.
    pub percent_identified: f64,
}

/// Applies optional calibration and a dev-fitted rule to test records.
pub fn evaluate_automation(
    test: &[PredictionRecord],
    rule: &ThresholdRule,
    maps: Option<&IsotonicMap>,
) -> Result<AutomationReport> {
    if rule.provenance != Provenance::Dev {
        return Err(Error::Leakage("threshold rule was fitted on test data".into()));
    }
    let calibrated;
    let records = match maps {
        Some(m) => {
            calibrated = m.calibrate_all(test)?;
            &calibrated[..]
        }
        None => test,
    };
    let result = automate(records, rule);
    let possible = records.iter().filter(|r| record_f1(r, rule.decision_threshold) == 1.0).count();
    let percent_identified = if possible == 0 { 0.0 } else { result.tp as f64 / possible as f64 };
    Ok(AutomationReport { result, possible, percent_identified })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutomationRow {
    pub max_fp: f64,
    pub calibrated: bool,
    pub percent_identified: f64,
    pub achieved_fp_rate: f64,
}

pub fn automation_csv(rows: &[AutomationRow]) -> String {
    let mut s = String::from("max_fp,calibrated,percent_identified,achieved_fp_rate\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:.2},{},{:.4},{:.4}",
            r.max_fp,
            r.calibrated,
            100.0 * r.percent_identified,
            r.achieved_fp_rate
        );
    }
    s
}
