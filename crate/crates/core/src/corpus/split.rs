use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encounter::Encounter;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<Encounter>,
    pub dev: Vec<Encounter>,
    pub test: Vec<Encounter>,
}

#[derive(Clone, Copy)]
enum Part {
    Train,
    Dev,
    Test,
}

/// Random patient-level split; encounters keep their input order within each part.
pub fn split_by_patient(corpus: &[Encounter], n_dev: usize, n_test: usize, seed: u64) -> Result<Split> {
    let mut patients: Vec<&str> = corpus
        .iter()
        .map(|e| e.patient_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if n_dev + n_test >= patients.len() && n_dev + n_test > 0 {
        return Err(Error::Invalid(format!(
            "cannot hold out {n_dev} dev and {n_test} test patients from {}",
            patients.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    let assign: HashMap<&str, Part> = patients
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let part = if i < n_dev {
                Part::Dev
            } else if i < n_dev + n_test {
                Part::Test
            } else {
                Part::Train
            };
            (p, part)
        })
        .collect();
    let mut split = Split::default();
    for e in corpus {
        match assign[e.patient_id.as_str()] {
            Part::Train => split.train.push(e.clone()),
            Part::Dev => split.dev.push(e.clone()),
            Part::Test => split.test.push(e.clone()),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};
    use proptest::prelude::*;

    fn patients(part: &[Encounter]) -> BTreeSet<String> {
        part.iter().map(|e| e.patient_id.clone()).collect()
    }

    fn corpus(n_patients: usize) -> Vec<Encounter> {
        generate_corpus(&CorpusConfig {
            n_patients,
            mean_encounters_per_patient: 3.0,
            n_codes: 30,
            vocab_size: 50,
            ..CorpusConfig::default()
        })
        .unwrap()
        .encounters
    }

    #[test]
    fn empty_holdout_keeps_everything_in_train() {
        let c = corpus(5);
        let s = split_by_patient(&c, 0, 0, 1).unwrap();
        assert_eq!(s.train, c);
        assert!(s.dev.is_empty() && s.test.is_empty());
    }

    #[test]
    fn three_patients_one_each() {
        let c = corpus(3);
        let s = split_by_patient(&c, 1, 1, 9).unwrap();
        for part in [&s.train, &s.dev, &s.test] {
            let ps = patients(part);
            assert_eq!(ps.len(), 1);
            let p = ps.iter().next().unwrap();
            assert_eq!(part.len(), c.iter().filter(|e| &e.patient_id == p).count());
        }
        assert_eq!(s, split_by_patient(&c, 1, 1, 9).unwrap());
    }

    #[test]
    fn insufficient_patients() {
        let c = corpus(3);
        assert!(split_by_patient(&c, 2, 1, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn parts_are_patient_disjoint(seed in any::<u64>(), n_dev in 0usize..5, n_test in 0usize..5) {
            let c = corpus(12);
            let s = split_by_patient(&c, n_dev, n_test, seed).unwrap();
            let (a, b, t) = (patients(&s.train), patients(&s.dev), patients(&s.test));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&t) && b.is_disjoint(&t));
            prop_assert_eq!(b.len(), n_dev);
            prop_assert_eq!(t.len(), n_test);
            prop_assert_eq!(s.train.len() + s.dev.len() + s.test.len(), c.len());
        }
    }
}
