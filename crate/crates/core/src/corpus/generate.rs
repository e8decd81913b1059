use std::collections::BTreeSet;

use chrono::{Days, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;

use super::encounter::Encounter;
use super::labels::LabelSpace;
use crate::error::{Error, Result};

const MAX_CHAPTERS: usize = 26 * 100;
const NOISE_MEDS: usize = 120;
const NOISE_PROCS: usize = 80;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_patients: usize,
    pub n_codes: usize,
    pub n_depts: usize,
    pub n_doctors: usize,
    pub tokens_per_code: usize,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    pub ditto_probability: f64,
    pub omitted_evidence_fraction: f64,
    pub mean_encounters_per_patient: f64,
    pub mean_codes_per_encounter: f64,
    /// Mean number of filler tokens per note.
    pub noise_tokens_per_note: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_patients: 500,
            n_codes: 300,
            n_depts: 12,
            n_doctors: 60,
            tokens_per_code: 3,
            vocab_size: 1500,
            zipf_exponent: 1.0,
            ditto_probability: 0.5,
            omitted_evidence_fraction: 0.2,
            mean_encounters_per_patient: 14.0,
            mean_codes_per_encounter: 1.6,
            noise_tokens_per_note: 12.0,
            seed: 42,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_patients", self.n_patients),
            ("n_codes", self.n_codes),
            ("n_depts", self.n_depts),
            ("n_doctors", self.n_doctors),
            ("tokens_per_code", self.tokens_per_code),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, p) in [
            ("ditto_probability", self.ditto_probability),
            ("omitted_evidence_fraction", self.omitted_evidence_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::Config("zipf_exponent must be positive".into()));
        }
        for (name, m) in [
            ("mean_encounters_per_patient", self.mean_encounters_per_patient),
            ("mean_codes_per_encounter", self.mean_codes_per_encounter),
        ] {
            if !(m >= 1.0 && m.is_finite()) {
                return Err(Error::Config(format!("{name} must be at least 1, got {m}")));
            }
        }
        if !(self.noise_tokens_per_note >= 0.0 && self.noise_tokens_per_note.is_finite()) {
            return Err(Error::Config("noise_tokens_per_note must be non-negative".into()));
        }
        if self.n_codes > MAX_CHAPTERS {
            return Err(Error::Config(format!(
                "n_codes {} exceeds the {MAX_CHAPTERS}-chapter code namespace",
                self.n_codes
            )));
        }
        Ok(())
    }
}

/// Hidden facts about a generated corpus, useful for analysis and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTruth {
    /// Codes in Zipf rank order (most frequent first).
    pub zipf_order: Vec<String>,
    /// Codes that never emit text evidence.
    pub silent_codes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub encounters: Vec<Encounter>,
    pub labels: LabelSpace,
    pub truth: GeneratorTruth,
}

struct CodeInfo {
    code: String,
    chapter: usize,
    tokens: Vec<String>,
    silent: bool,
    signature_med: String,
    signature_doctor: usize,
}

/// Pronounceable lowercase pseudo-word for an index; distinct indices give distinct words.
fn word(mut i: usize) -> String {
    const C: &[u8] = b"bdfghklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut s = String::new();
    loop {
        let syl = i % (C.len() * V.len());
        s.push(C[syl / V.len()] as char);
        s.push(V[syl % V.len()] as char);
        i /= C.len() * V.len();
        if i == 0 && s.len() >= 4 {
            break;
        }
    }
    s
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

struct World {
    codes: Vec<CodeInfo>,
    zipf: WeightedIndex<f64>,
    zipf_order: Vec<usize>,
    chapter_tokens: Vec<String>,
    chapter_dept: Vec<usize>,
    dept_doctors: Vec<Vec<usize>>,
    noise_words: Vec<String>,
    noise_zipf: WeightedIndex<f64>,
    noise_meds: Vec<String>,
    noise_procs: Vec<String>,
}

impl World {
    fn build(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut chapter_ids: Vec<usize> = (0..MAX_CHAPTERS).collect();
        chapter_ids.shuffle(rng);
        let mut per_chapter = Vec::new();
        let mut total = 0;
        while total < cfg.n_codes {
            let k = rng.random_range(1..=4).min(cfg.n_codes - total);
            per_chapter.push(k);
            total += k;
        }
        let n_chapters = per_chapter.len();
        let chapter_names: Vec<String> = chapter_ids[..n_chapters]
            .iter()
            .map(|&c| format!("{}{:02}", (b'A' + (c / 100) as u8) as char, c % 100))
            .collect();
        let chapter_dept: Vec<usize> = (0..n_chapters).map(|_| rng.random_range(0..cfg.n_depts)).collect();
        let mut dept_doctors = vec![Vec::new(); cfg.n_depts];
        for d in 0..cfg.n_doctors {
            dept_doctors[d % cfg.n_depts].push(d);
        }
        for (dept, docs) in dept_doctors.iter_mut().enumerate() {
            if docs.is_empty() {
                docs.push(dept % cfg.n_doctors);
            }
        }

        let mut next_word = 0usize;
        let mut fresh_word = || {
            next_word += 1;
            word(next_word + 400)
        };
        let chapter_tokens: Vec<String> = (0..n_chapters).map(|_| fresh_word()).collect();
        let mut codes = Vec::with_capacity(cfg.n_codes);
        for (ch, &k) in per_chapter.iter().enumerate() {
            let mut suffixes = BTreeSet::new();
            while suffixes.len() < k {
                let len = rng.random_range(1..=3);
                let s: String = (0..len).map(|_| (b'0' + rng.random_range(0..10u8)) as char).collect();
                suffixes.insert(s);
            }
            for s in suffixes {
                let tokens = (0..cfg.tokens_per_code).map(|_| fresh_word()).collect();
                let dept = chapter_dept[ch];
                let signature_doctor = *dept_doctors[dept].choose(rng).expect("non-empty");
                codes.push(CodeInfo {
                    code: format!("{}.{}", chapter_names[ch], s),
                    chapter: ch,
                    tokens,
                    silent: false,
                    signature_med: format!("RX{:04}", codes.len()),
                    signature_doctor,
                });
            }
        }
        let n_silent = (cfg.omitted_evidence_fraction * cfg.n_codes as f64).round() as usize;
        let mut order: Vec<usize> = (0..cfg.n_codes).collect();
        order.shuffle(rng);
        for &i in &order[..n_silent] {
            codes[i].silent = true;
        }
        let mut zipf_order: Vec<usize> = (0..cfg.n_codes).collect();
        zipf_order.shuffle(rng);
        let mut weights = vec![0.0; cfg.n_codes];
        for (rank, &c) in zipf_order.iter().enumerate() {
            weights[c] = 1.0 / ((rank + 1) as f64).powf(cfg.zipf_exponent);
        }
        let zipf = WeightedIndex::new(&weights).expect("positive weights");

        let noise_words: Vec<String> = (0..cfg.vocab_size).map(|_| fresh_word()).collect();
        let noise_w: Vec<f64> = (0..cfg.vocab_size).map(|r| 1.0 / (r + 1) as f64).collect();
        let noise_zipf = WeightedIndex::new(&noise_w).expect("positive weights");
        let noise_meds = (0..NOISE_MEDS).map(|i| format!("RX{:04}", cfg.n_codes + i)).collect();
        let noise_procs = (0..NOISE_PROCS).map(|i| format!("PX{:03}", i)).collect();
        Self {
            codes,
            zipf,
            zipf_order,
            chapter_tokens,
            chapter_dept,
            dept_doctors,
            noise_words,
            noise_zipf,
            noise_meds,
            noise_procs,
        }
    }

    /// Indicative tokens of one code: its chapter token and a non-empty subset of its own tokens.
    fn evidence(&self, code: usize, rng: &mut ChaCha8Rng, out: &mut Vec<String>) {
        let info = &self.codes[code];
        out.push(self.chapter_tokens[info.chapter].clone());
        let start = out.len();
        for t in &info.tokens {
            if rng.random::<f64>() < 0.75 {
                out.push(t.clone());
            }
        }
        if out.len() == start {
            out.push(info.tokens.choose(rng).expect("tokens_per_code > 0").clone());
        }
    }

    fn noise(&self, n: usize, rng: &mut ChaCha8Rng, out: &mut Vec<String>) {
        for _ in 0..n {
            out.push(self.noise_words[self.noise_zipf.sample(rng)].clone());
        }
    }
}

fn draw_code_set(
    cfg: &CorpusConfig,
    world: &World,
    chronic: &[usize],
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let k = (1 + poisson(rng, cfg.mean_codes_per_encounter - 1.0)).min(cfg.n_codes);
    let mut set: Vec<usize> = Vec::with_capacity(k);
    for &c in chronic {
        if set.len() < k && rng.random::<f64>() < 0.5 {
            set.push(c);
        }
    }
    let mut attempts = 0;
    while set.len() < k && attempts < 50 * k {
        let c = world.zipf.sample(rng);
        if !set.contains(&c) {
            set.push(c);
        }
        attempts += 1;
    }
    if set.is_empty() {
        set.push(world.zipf.sample(rng));
    }
    set.shuffle(rng);
    set
}

fn same_set(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && a.iter().all(|x| b.contains(x))
}

fn join_tokens(tokens: &[String]) -> String {
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push_str(if i % 9 == 0 { ". " } else { " " });
        }
        s.push_str(t);
    }
    s
}

struct Visit {
    codes: Vec<usize>,
    enc: Encounter,
}

/// Seeded synthetic outpatient corpus.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<GeneratedCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = World::build(cfg, &mut rng);
    let epoch = NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date");
    let mut encounters = Vec::new();

    for p in 0..cfg.n_patients {
        let patient_id = format!("P{:05}", p + 1);
        let n_chronic = 1 + usize::from(rng.random::<f64>() < 0.5);
        let mut chronic = Vec::new();
        while chronic.len() < n_chronic.min(cfg.n_codes) {
            let c = world.zipf.sample(&mut rng);
            if !chronic.contains(&c) {
                chronic.push(c);
            }
        }
        let n_enc = 1 + poisson(&mut rng, cfg.mean_encounters_per_patient - 1.0);
        let mut date = epoch + Days::new(rng.random_range(0..365));
        let mut prev: Option<Visit> = None;
        for _ in 0..n_enc {
            let visit = match prev {
                Some(ref last) if rng.random::<f64>() < cfg.ditto_probability => {
                    let mut growth = Vec::new();
                    let n_noise = poisson(&mut rng, cfg.noise_tokens_per_note / 4.0);
                    world.noise(n_noise, &mut rng, &mut growth);
                    let mut enc = last.enc.clone();
                    enc.date = date;
                    if !growth.is_empty() {
                        enc.text = format!("{} {}", enc.text, join_tokens(&growth));
                    }
                    Visit {
                        codes: last.codes.clone(),
                        enc,
                    }
                }
                _ => {
                    let mut codes = draw_code_set(cfg, &world, &chronic, &mut rng);
                    if let Some(ref last) = prev {
                        for _ in 0..20 {
                            if !same_set(&codes, &last.codes) {
                                break;
                            }
                            codes = draw_code_set(cfg, &world, &chronic, &mut rng);
                        }
                    }
                    fresh_visit(cfg, &world, &patient_id, date, codes, &mut rng)
                }
            };
            encounters.push(visit.enc.clone());
            prev = Some(visit);
            date = date + Days::new(rng.random_range(1..=45));
        }
    }

    let mut counts = std::collections::BTreeMap::new();
    for info in &world.codes {
        counts.insert(info.code.clone(), 0);
    }
    for (code, n) in LabelSpace::count_documents(&encounters) {
        counts.insert(code, n);
    }
    let truth = GeneratorTruth {
        zipf_order: world.zipf_order.iter().map(|&c| world.codes[c].code.clone()).collect(),
        silent_codes: world.codes.iter().filter(|c| c.silent).map(|c| c.code.clone()).collect(),
    };
    Ok(GeneratedCorpus {
        encounters,
        labels: LabelSpace::from_counts(counts),
        truth,
    })
}

fn fresh_visit(
    cfg: &CorpusConfig,
    world: &World,
    patient_id: &str,
    date: NaiveDate,
    codes: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> Visit {
    let mut tokens = Vec::new();
    let mut meds = BTreeSet::new();
    for &c in &codes {
        if world.codes[c].silent {
            meds.insert(world.codes[c].signature_med.clone());
        } else {
            world.evidence(c, rng, &mut tokens);
        }
    }
    let n_noise = poisson(rng, cfg.noise_tokens_per_note);
    world.noise(n_noise, rng, &mut tokens);
    tokens.shuffle(rng);
    for _ in 0..poisson(rng, 1.5) {
        meds.insert(world.noise_meds.choose(rng).expect("non-empty").clone());
    }
    let mut procs = BTreeSet::new();
    for _ in 0..poisson(rng, 0.8) {
        procs.insert(world.noise_procs.choose(rng).expect("non-empty").clone());
    }
    let primary = &world.codes[codes[0]];
    let dept = world.chapter_dept[primary.chapter];
    let doctor = if primary.silent {
        primary.signature_doctor
    } else {
        *world.dept_doctors[dept].choose(rng).expect("non-empty")
    };
    let mut code_strings: Vec<String> = codes.iter().map(|&c| world.codes[c].code.clone()).collect();
    code_strings.sort();
    let enc = Encounter {
        patient_id: patient_id.to_string(),
        date,
        dept: format!("D{:02}", dept + 1),
        doctor: format!("DR{:03}", doctor + 1),
        text: join_tokens(&tokens),
        codes: code_strings,
        meds: meds.into_iter().collect(),
        procs: procs.into_iter().collect(),
    };
    Visit { codes, enc }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::encounter::is_valid_code;

    fn small() -> CorpusConfig {
        CorpusConfig {
            n_patients: 40,
            mean_encounters_per_patient: 5.0,
            n_codes: 60,
            vocab_size: 200,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn words_are_distinct() {
        let words: BTreeSet<String> = (0..20_000).map(word).collect();
        assert_eq!(words.len(), 20_000);
    }

    #[test]
    fn single_patient_single_visit() {
        let cfg = CorpusConfig {
            n_patients: 1,
            mean_encounters_per_patient: 1.0,
            ..small()
        };
        let g = generate_corpus(&cfg).unwrap();
        assert!(!g.encounters.is_empty());
        assert!(g.encounters.iter().all(|e| e.patient_id == g.encounters[0].patient_id));
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_corpus(&small()).unwrap();
        let b = generate_corpus(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&CorpusConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.encounters, c.encounters);
    }

    #[test]
    fn records_satisfy_invariants() {
        let g = generate_corpus(&small()).unwrap();
        assert_eq!(g.labels.len(), 60);
        for e in &g.encounters {
            assert!(!e.codes.is_empty());
            assert!(e.codes.iter().all(|c| is_valid_code(c)));
            assert!(e.codes.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(Encounter::from_line(&e.to_line(), 1).unwrap(), *e);
        }
    }

    #[test]
    fn no_ditto_means_consecutive_sets_differ() {
        let cfg = CorpusConfig {
            ditto_probability: 0.0,
            ..small()
        };
        let g = generate_corpus(&cfg).unwrap();
        for w in g.encounters.windows(2) {
            if w[0].patient_id == w[1].patient_id {
                assert_ne!(w[0].codes, w[1].codes);
            }
        }
    }

    #[test]
    fn dept_follows_chapter() {
        let g = generate_corpus(&small()).unwrap();
        let mut seen = std::collections::HashMap::new();
        for e in &g.encounters {
            if e.codes.len() == 1 {
                let ch = crate::corpus::chapter(&e.codes[0]).to_string();
                let d = seen.entry(ch).or_insert_with(|| e.dept.clone());
                assert_eq!(*d, e.dept);
            }
        }
    }

    #[test]
    fn silent_codes_leave_signature_meds() {
        let cfg = CorpusConfig {
            omitted_evidence_fraction: 1.0,
            ditto_probability: 0.0,
            noise_tokens_per_note: 0.0,
            ..small()
        };
        let g = generate_corpus(&cfg).unwrap();
        assert_eq!(g.truth.silent_codes.len(), 60);
        for e in &g.encounters {
            assert!(e.text.is_empty());
            assert!(e.meds.len() >= e.codes.len());
        }
    }

    #[test]
    fn config_errors() {
        let too_many = CorpusConfig {
            n_codes: 2601,
            ..small()
        };
        assert!(matches!(generate_corpus(&too_many), Err(Error::Config(_))));
        let bad_p = CorpusConfig {
            ditto_probability: 1.5,
            ..small()
        };
        assert!(bad_p.validate().is_err());
        let bad_z = CorpusConfig {
            zipf_exponent: 0.0,
            ..small()
        };
        assert!(bad_z.validate().is_err());
    }
}
