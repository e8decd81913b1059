//! Label-attention classifiers and the metadata reranker.

mod base;
mod reranker;

pub use base::{predict_set, Arch, BaseConfig, BaseModel, BaseVars, Encoded};
pub use reranker::{ModalityVocab, RerankInput, RerankOutput, Reranker, RerankerConfig, RerankerVars};

#[cfg(test)]
mod tests;
