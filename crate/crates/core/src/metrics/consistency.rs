use crate::corpus::{is_valid_code, Encounter};
use crate::error::{Error, Result};

/// Two codes that share the three-character chapter but differ afterwards.
pub fn level3_inconsistent(a: &str, b: &str) -> Result<bool> {
    for c in [a, b] {
        if !is_valid_code(c) {
            return Err(Error::Validation {
                line: 0,
                msg: format!("malformed code {c:?}"),
            });
        }
    }
    let rest = |c: &str| c[3..].replace('.', "");
    Ok(a[..3] == b[..3] && rest(a) != rest(b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyReport {
    pub matched: usize,
    pub inconsistent: usize,
    /// `inconsistent / matched`; `None` without matches.
    pub rate: Option<f64>,
}

pub fn consistency_check(pairs: &[(String, String)]) -> Result<ConsistencyReport> {
    let mut inconsistent = 0;
    for (a, b) in pairs {
        inconsistent += usize::from(level3_inconsistent(a, b)?);
    }
    Ok(ConsistencyReport {
        matched: pairs.len(),
        inconsistent,
        rate: (!pairs.is_empty()).then(|| inconsistent as f64 / pairs.len() as f64),
    })
}

/// Same-chapter code pairs between visits of one patient at most `window_days` apart.
pub fn matched_code_pairs(encounters: &[Encounter], window_days: i64) -> Vec<(String, String)> {
    let mut by_patient: std::collections::BTreeMap<&str, Vec<&Encounter>> = Default::default();
    for e in encounters {
        by_patient.entry(&e.patient_id).or_default().push(e);
    }
    let mut pairs = Vec::new();
    for visits in by_patient.values_mut() {
        visits.sort_by_key(|e| e.date);
        for i in 0..visits.len() {
            for j in i + 1..visits.len() {
                if (visits[j].date - visits[i].date).num_days() > window_days {
                    break;
                }
                for a in &visits[i].codes {
                    for b in &visits[j].codes {
                        if a[..3] == b[..3] {
                            pairs.push((a.clone(), b.clone()));
                        }
                    }
                }
            }
        }
    }
    pairs
}
