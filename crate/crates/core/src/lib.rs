//! Outpatient clinical coding: synthetic corpora, preprocessing, label-attention models
//! with a metadata reranker, evaluation and calibrated automation.

pub mod calibrate;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod preprocess;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
pub use seed::derive_seed;
