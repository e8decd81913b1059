//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment line, blank lines are ignored.
//! Every key has a default, so an empty file is a valid configuration.

use std::fmt::Write as _;

use outcode::corpus::CorpusConfig;
use outcode::model::{Arch, BaseConfig, RerankerConfig};
use outcode::preprocess::{DedupMode, PrepConfig};
use outcode::train::TrainConfig;
use outcode::{derive_seed, Error, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub dev_patients: usize,
    pub test_patients: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportConfig {
    pub oracle_min_count: usize,
    pub consistency_window_days: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub split: SplitConfig,
    pub prep: PrepConfig,
    pub model: BaseConfig,
    pub train: TrainConfig,
    pub reranker: RerankerConfig,
    pub reranker_train: TrainConfig,
    pub fractions: Vec<f64>,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            corpus: CorpusConfig::default(),
            split: SplitConfig {
                dev_patients: 50,
                test_patients: 50,
            },
            prep: PrepConfig::default(),
            model: BaseConfig::default(),
            train: TrainConfig::default(),
            reranker: RerankerConfig::default(),
            reranker_train: TrainConfig::reranker(),
            fractions: vec![0.05, 0.1, 0.25, 0.5, 1.0],
            report: ReportConfig {
                oracle_min_count: 10,
                consistency_window_days: 7,
            },
        }
    }
}

trait ConfigValue: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

from_str_value!(usize, u64, bool, Arch, DedupMode);

impl ConfigValue for f64 {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{s} is not a finite number"))
        }
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for Vec<f64> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|p| <f64 as ConfigValue>::parse(p.trim())).collect()
    }
    fn show(&self) -> String {
        self.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
    }
}

struct Key {
    name: &'static str,
    doc: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> std::result::Result<(), String>,
}

macro_rules! keys {
    ($($name:literal => $($field:ident).+, $doc:literal;)*) => {
        const KEYS: &[Key] = &[$(
            Key {
                name: $name,
                doc: $doc,
                get: |c| ConfigValue::show(&c.$($field).+),
                set: |c, v| {
                    c.$($field).+ = ConfigValue::parse(v)?;
                    Ok(())
                },
            },
        )*];
    };
}

keys! {
    "seed" => seed, "master seed; every stage derives its own stream from it";
    "corpus.n_patients" => corpus.n_patients, "synthetic patients";
    "corpus.n_codes" => corpus.n_codes, "distinct diagnosis codes";
    "corpus.n_depts" => corpus.n_depts, "departments";
    "corpus.n_doctors" => corpus.n_doctors, "doctors";
    "corpus.tokens_per_code" => corpus.tokens_per_code, "evidence tokens emitted per code";
    "corpus.vocab_size" => corpus.vocab_size, "size of the synthetic word pool";
    "corpus.zipf_exponent" => corpus.zipf_exponent, "code popularity exponent";
    "corpus.ditto_probability" => corpus.ditto_probability, "chance a follow-up visit copies the previous note";
    "corpus.omitted_evidence_fraction" => corpus.omitted_evidence_fraction, "share of codes whose evidence never appears in text";
    "corpus.mean_encounters_per_patient" => corpus.mean_encounters_per_patient, "mean visits per patient";
    "corpus.mean_codes_per_encounter" => corpus.mean_codes_per_encounter, "mean codes per visit";
    "corpus.noise_tokens_per_note" => corpus.noise_tokens_per_note, "mean filler tokens per note";
    "split.dev_patients" => split.dev_patients, "patients held out for development";
    "split.test_patients" => split.test_patients, "patients held out for testing";
    "prep.dedup_train" => prep.dedup_train, "remove ditto records from the train set";
    "prep.dedup_mode" => prep.dedup_mode, "consecutive or global";
    "prep.min_label_count" => prep.min_label_count, "drop codes with fewer train documents";
    "prep.min_token_count" => prep.min_token_count, "minimum token frequency for the vocabulary";
    "prep.max_len" => prep.max_len, "tokens kept per note";
    "model.arch" => model.arch, "caml or laat";
    "model.d_embed" => model.d_embed, "embedding width";
    "model.d_conv" => model.d_conv, "convolution channels";
    "model.kernel_width" => model.kernel_width, "convolution width";
    "model.d_attn" => model.d_attn, "laat attention projection width";
    "train.learning_rate" => train.learning_rate, "adam step size";
    "train.batch_size" => train.batch_size, "examples per update";
    "train.max_epochs" => train.max_epochs, "epoch budget";
    "train.patience" => train.patience, "epochs without dev recall@5 gain before stopping";
    "train.dropout" => train.dropout, "embedding dropout rate";
    "train.decision_threshold" => train.decision_threshold, "probability above which a code is predicted";
    "train.record_wall_clock" => train.record_wall_clock, "write epoch timings (outputs then differ between runs)";
    "reranker.d" => reranker.d, "metadata embedding width";
    "reranker.heads" => reranker.heads, "attention heads";
    "reranker.learning_rate" => reranker_train.learning_rate, "adam step size";
    "reranker.batch_size" => reranker_train.batch_size, "examples per update";
    "reranker.max_epochs" => reranker_train.max_epochs, "epoch budget";
    "reranker.patience" => reranker_train.patience, "epochs without dev recall@5 gain before stopping";
    "fractions.list" => fractions, "train fractions for the data-size curve; must include 1";
    "report.oracle_min_count" => report.oracle_min_count, "train-count floor for the restricted oracle";
    "report.consistency_window_days" => report.consistency_window_days, "visit window for the label consistency check";
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Validation { line: i + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let key = KEYS
                .iter()
                .find(|key| key.name == k)
                .ok_or_else(|| err(format!("unknown key {k:?}")))?;
            if !seen.insert(k) {
                return Err(err(format!("duplicate key {k:?}")));
            }
            (key.set)(&mut cfg, v).map_err(|e| err(format!("{k}: {e}")))?;
        }
        cfg.sync();
        Ok(cfg)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key in declaration order; parsing this text gives back the same configuration.
    pub fn normalized(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{} = {}", key.name, (key.get)(self));
        }
        s
    }

    /// Normalized form with each key's meaning as a comment.
    pub fn documented(&self) -> String {
        let mut s = String::from("# outcode run configuration\n");
        for key in KEYS {
            let _ = write!(s, "\n# {}\n{} = {}\n", key.doc, key.name, (key.get)(self));
        }
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.normalized().as_bytes()))
    }

    fn sync(&mut self) {
        self.reranker_train.decision_threshold = self.train.decision_threshold;
        self.reranker_train.max_len = self.prep.max_len;
        self.reranker_train.record_wall_clock = self.train.record_wall_clock;
        self.train.max_len = self.prep.max_len;
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus_config().validate()?;
        self.train_config().validate()?;
        self.reranker_train_config().validate()?;
        if self.prep.min_label_count == 0 || self.prep.min_token_count == 0 || self.prep.max_len == 0 {
            return Err(Error::Config("prep counts and max_len must be at least 1".into()));
        }
        let dims = [
            self.model.d_embed,
            self.model.d_conv,
            self.model.kernel_width,
            self.model.d_attn,
            self.reranker.d,
            self.reranker.heads,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model widths and head counts must be positive".into()));
        }
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) || !self.fractions.contains(&1.0) {
            return Err(Error::Config("fractions.list entries must lie in (0, 1] and include 1".into()));
        }
        Ok(())
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            seed: derive_seed(self.seed, "corpus"),
            ..self.corpus.clone()
        }
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init")
    }

    pub fn reranker_init_seed(&self) -> u64 {
        derive_seed(self.seed, "reranker-init")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "train"),
            ..self.train.clone()
        }
    }

    pub fn reranker_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "reranker-train"),
            ..self.reranker_train.clone()
        }
    }
}
