use std::collections::BTreeSet;
use std::fmt;

use super::encounter::Encounter;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub documents: usize,
    pub patients: usize,
    pub distinct_codes: usize,
    pub mean_text_chars: f64,
    pub mean_codes: f64,
    /// Percentage of distinct codes absent from the reference train set.
    pub unseen_code_pct: Option<f64>,
}

pub fn corpus_stats(encounters: &[Encounter], reference_train: Option<&[Encounter]>) -> CorpusStats {
    let codes: BTreeSet<&str> = encounters.iter().flat_map(|e| e.codes.iter().map(String::as_str)).collect();
    let n = encounters.len();
    let mean = |total: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    let unseen_code_pct = reference_train.map(|train| {
        let known: BTreeSet<&str> = train.iter().flat_map(|e| e.codes.iter().map(String::as_str)).collect();
        if codes.is_empty() {
            0.0
        } else {
            100.0 * codes.iter().filter(|c| !known.contains(*c)).count() as f64 / codes.len() as f64
        }
    });
    CorpusStats {
        documents: n,
        patients: encounters.iter().map(|e| e.patient_id.as_str()).collect::<BTreeSet<_>>().len(),
        distinct_codes: codes.len(),
        mean_text_chars: mean(encounters.iter().map(|e| e.text.chars().count()).sum()),
        mean_codes: mean(encounters.iter().map(|e| e.codes.len()).sum()),
        unseen_code_pct,
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "documents            {}", self.documents)?;
        writeln!(f, "patients             {}", self.patients)?;
        writeln!(f, "distinct codes       {}", self.distinct_codes)?;
        writeln!(f, "mean length (chars)  {:.1}", self.mean_text_chars)?;
        write!(f, "mean codes per doc   {:.3}", self.mean_codes)?;
        if let Some(p) = self.unseen_code_pct {
            write!(f, "\nunseen codes (%)     {p:.2}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn enc(p: &str, codes: &[&str], text: &str) -> Encounter {
        Encounter {
            patient_id: p.into(),
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            dept: "D".into(),
            doctor: "X".into(),
            text: text.into(),
            codes: codes.iter().map(|c| c.to_string()).collect(),
            meds: vec![],
            procs: vec![],
        }
    }

    #[test]
    fn mean_codes() {
        let s = corpus_stats(
            &[enc("a", &["A00.1", "B00.1"], "héllo"), enc("b", &["A00.1", "C00", "D00", "E00"], "abc")],
            None,
        );
        assert_eq!(s.mean_codes, 3.0);
        assert_eq!(s.mean_text_chars, 4.0);
        assert_eq!(s.patients, 2);
        assert_eq!(s.distinct_codes, 5);
    }

    #[test]
    fn unseen_percentage() {
        let eval = [enc("a", &["A00", "B00"], "")];
        let train = [enc("b", &["A00"], "")];
        assert_eq!(corpus_stats(&eval, Some(&train)).unseen_code_pct, Some(50.0));
    }
}
