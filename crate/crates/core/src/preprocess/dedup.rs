use std::collections::BTreeSet;

use crate::corpus::Encounter;
use crate::error::{Error, Result};

/// Which earlier records count as duplicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DedupMode {
    /// Drop a record whose code set equals the previous retained record's.
    #[default]
    Consecutive,
    /// Drop a record whose code set equals any earlier retained record's.
    Global,
}

impl std::str::FromStr for DedupMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consecutive" => Ok(Self::Consecutive),
            "global" => Ok(Self::Global),
            other => Err(Error::Config(format!("unknown dedup mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for DedupMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Consecutive => "consecutive",
            Self::Global => "global",
        })
    }
}

/// Removes copied ("ditto") records from one patient's history, sorted by date.
pub fn dedup_ditto(encounters: &[Encounter]) -> Result<Vec<Encounter>> {
    dedup_patient(encounters, DedupMode::Consecutive)
}

pub fn dedup_patient(encounters: &[Encounter], mode: DedupMode) -> Result<Vec<Encounter>> {
    if let Some(first) = encounters.first() {
        if let Some(other) = encounters.iter().find(|e| e.patient_id != first.patient_id) {
            return Err(Error::Contract(format!(
                "dedup expects one patient, got {} and {}",
                first.patient_id, other.patient_id
            )));
        }
    }
    let mut sorted: Vec<&Encounter> = encounters.iter().collect();
    sorted.sort_by_key(|e| e.date);
    let mut kept: Vec<Encounter> = Vec::with_capacity(sorted.len());
    let mut seen: BTreeSet<&[String]> = BTreeSet::new();
    for e in sorted {
        let duplicate = match mode {
            DedupMode::Consecutive => kept.last().is_some_and(|k| k.codes == e.codes),
            DedupMode::Global => seen.contains(e.codes.as_slice()),
        };
        if !duplicate {
            seen.insert(&e.codes);
            kept.push(e.clone());
        }
    }
    Ok(kept)
}

/// Applies patient-level dedup to a whole corpus; patients appear in first-seen order.
pub fn dedup_corpus(encounters: &[Encounter], mode: DedupMode) -> Vec<Encounter> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: std::collections::HashMap<&str, Vec<Encounter>> = Default::default();
    for e in encounters {
        let g = groups.entry(e.patient_id.as_str()).or_insert_with(|| {
            order.push(e.patient_id.as_str());
            Vec::new()
        });
        g.push(e.clone());
    }
    order
        .into_iter()
        .flat_map(|p| dedup_patient(&groups[p], mode).expect("groups hold one patient"))
        .collect()
}
