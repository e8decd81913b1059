use std::collections::BTreeSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One outpatient visit.
///
/// `codes` is kept sorted ascending and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Encounter {
    pub patient_id: String,
    pub date: NaiveDate,
    pub dept: String,
    pub doctor: String,
    pub text: String,
    pub codes: Vec<String>,
    pub meds: Vec<String>,
    pub procs: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEncounter {
    patient_id: String,
    date: NaiveDate,
    dept: String,
    doctor: String,
    text: String,
    codes: Vec<String>,
    meds: Vec<String>,
    procs: Vec<String>,
}

impl Encounter {
    /// Validates and normalises a code list: non-empty, unique, well-formed, sorted.
    pub fn normalize_codes(codes: Vec<String>) -> std::result::Result<Vec<String>, String> {
        if codes.is_empty() {
            return Err("code set is empty".into());
        }
        let mut seen = BTreeSet::new();
        for c in &codes {
            if !is_valid_code(c) {
                return Err(format!("malformed code {c:?}"));
            }
            if !seen.insert(c.clone()) {
                return Err(format!("duplicate code {c:?}"));
            }
        }
        Ok(seen.into_iter().collect())
    }

    pub fn code_set(&self) -> BTreeSet<&str> {
        self.codes.iter().map(String::as_str).collect()
    }

    /// Serialised record, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("encounters always serialise")
    }

    pub fn from_line(line: &str, lineno: usize) -> Result<Self> {
        let raw: RawEncounter = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let codes = Self::normalize_codes(raw.codes).map_err(|msg| Error::Validation {
            line: lineno,
            msg,
        })?;
        Ok(Encounter {
            patient_id: raw.patient_id,
            date: raw.date,
            dept: raw.dept,
            doctor: raw.doctor,
            text: raw.text,
            codes,
            meds: raw.meds,
            procs: raw.procs,
        })
    }
}

/// One uppercase letter, two digits, then optionally `.` and 1-4 alphanumerics.
pub fn is_valid_code(code: &str) -> bool {
    let b = code.as_bytes();
    if b.len() < 3 || !b[0].is_ascii_uppercase() || !b[1].is_ascii_digit() || !b[2].is_ascii_digit() {
        return false;
    }
    match &b[3..] {
        [] => true,
        [b'.', rest @ ..] => (1..=4).contains(&rest.len()) && rest.iter().all(u8::is_ascii_alphanumeric),
        _ => false,
    }
}

/// Three-character chapter prefix of a code.
pub fn chapter(code: &str) -> &str {
    &code[..3.min(code.len())]
}

pub fn read_encounters(path: &Path) -> Result<Vec<Encounter>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    parse_encounters(file)
}

pub fn parse_encounters(input: impl BufRead) -> Result<Vec<Encounter>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        out.push(Encounter::from_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn write_encounters(path: &Path, encounters: &[Encounter]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for e in encounters {
        writeln!(out, "{}", e.to_line())?;
    }
    out.flush()?;
    Ok(())
}
