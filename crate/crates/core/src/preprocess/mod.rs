//! Training-data preparation: ditto removal, label filtering and tokenization.

mod dedup;
mod filter;
mod pipeline;
mod vocab;

pub use dedup::{dedup_corpus, dedup_ditto, dedup_patient, DedupMode};
pub use filter::filter_min_frequency;
pub use pipeline::{aux_text, prepare, PrepConfig, PrepReport, Prepared};
pub use vocab::{build_vocab, tokenize, words, TokenizedNote, Vocabulary, DEFAULT_MAX_LEN, PAD, UNK};
