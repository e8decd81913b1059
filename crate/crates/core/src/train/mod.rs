//! Optimization of the base model and the reranker, with early stopping on dev Recall@5.

mod adam;
mod base;
mod config;
mod fit;
mod fraction;
mod reranker;

pub use adam::Adam;
pub use base::{predict_note, predict_records, train_base};
pub use config::{EpochRecord, TrainConfig, TrainHistory, EARLY_STOP_K};
pub use fraction::{data_fraction_experiment, fraction_csv, subsample_train, FractionRow};
pub use reranker::{rerank_records, reranker_inputs, train_reranker};
