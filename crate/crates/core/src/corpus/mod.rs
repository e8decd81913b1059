//! Outpatient encounter records, the synthetic generator and patient splits.

mod encounter;
mod generate;
mod labels;
mod split;
mod stats;

pub use encounter::{chapter, is_valid_code, parse_encounters, read_encounters, write_encounters, Encounter};
pub use generate::{generate_corpus, CorpusConfig, GeneratedCorpus, GeneratorTruth};
pub use labels::LabelSpace;
pub use split::{split_by_patient, Split};
pub use stats::{corpus_stats, CorpusStats};
