use std::collections::{BTreeSet, HashMap};

use outcode::corpus::{corpus_stats, generate_corpus, CorpusConfig, Encounter};

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn label_frequencies_follow_zipf_rank() {
    let cfg = CorpusConfig {
        n_patients: 4000,
        mean_encounters_per_patient: 4.0,
        ditto_probability: 0.0,
        n_codes: 200,
        vocab_size: 100,
        ..CorpusConfig::default()
    };
    let g = generate_corpus(&cfg).unwrap();
    let observed: Vec<f64> = g
        .truth
        .zipf_order
        .iter()
        .map(|c| g.labels.train_count(g.labels.index_of(c).unwrap()) as f64)
        .collect();
    let ideal: Vec<f64> = (0..observed.len()).map(|r| 1.0 / (r + 1) as f64).collect();
    let rho = pearson(&ranks(&observed), &ranks(&ideal));
    assert!(rho >= 0.95, "rank correlation {rho}");
}

#[test]
fn ditto_rate_matches_probability() {
    for p in [0.2, 0.5] {
        let cfg = CorpusConfig {
            n_patients: 1200,
            mean_encounters_per_patient: 10.0,
            ditto_probability: p,
            n_codes: 150,
            vocab_size: 100,
            ..CorpusConfig::default()
        };
        let e = generate_corpus(&cfg).unwrap().encounters;
        assert!(e.len() >= 10_000);
        let pairs: Vec<_> = e.windows(2).filter(|w| w[0].patient_id == w[1].patient_id).collect();
        let same = pairs.iter().filter(|w| w[0].codes == w[1].codes).count();
        let rate = same as f64 / pairs.len() as f64;
        assert!((rate - p).abs() <= 0.05, "p={p} observed {rate}");
    }
}

#[test]
fn ditto_copies_most_of_the_text() {
    let e = generate_corpus(&CorpusConfig::default()).unwrap().encounters;
    for w in e.windows(2) {
        if w[0].patient_id == w[1].patient_id && w[0].codes == w[1].codes {
            let prev: Vec<&str> = w[0].text.split_whitespace().collect();
            let next: Vec<&str> = w[1].text.split_whitespace().collect();
            let kept = prev.iter().zip(&next).filter(|(a, b)| a == b).count();
            assert!(kept as f64 >= 0.8 * prev.len() as f64);
        }
    }
}

#[test]
fn default_stats_match_a_recount() {
    let e = generate_corpus(&CorpusConfig::default()).unwrap().encounters;
    let s = corpus_stats(&e, None);

    let mut patients = BTreeSet::new();
    let mut codes = HashMap::new();
    let (mut chars, mut n_codes) = (0usize, 0usize);
    for rec in e.iter().map(Encounter::to_line) {
        let v: serde_json::Value = serde_json::from_str(&rec).unwrap();
        patients.insert(v["patient_id"].as_str().unwrap().to_string());
        chars += v["text"].as_str().unwrap().chars().count();
        for c in v["codes"].as_array().unwrap() {
            *codes.entry(c.as_str().unwrap().to_string()).or_insert(0) += 1;
            n_codes += 1;
        }
    }
    assert_eq!(s.documents, e.len());
    assert_eq!(s.patients, patients.len());
    assert_eq!(s.distinct_codes, codes.len());
    assert_eq!(s.mean_text_chars, chars as f64 / e.len() as f64);
    assert_eq!(s.mean_codes, n_codes as f64 / e.len() as f64);
    eprintln!("{s}");
}
