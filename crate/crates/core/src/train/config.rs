use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::preprocess::DEFAULT_MAX_LEN;

/// Cut-off used for early stopping and reported dev recall.
pub const EARLY_STOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev Recall@5 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub decision_threshold: f64,
    /// Embedding dropout rate for the base model.
    pub dropout: f64,
    pub max_len: usize,
    /// Wall-clock seconds are non-deterministic; they are only recorded on request.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 30,
            patience: 3,
            seed: 42,
            decision_threshold: 0.5,
            dropout: 0.2,
            max_len: DEFAULT_MAX_LEN,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    /// Settings for the reranker: five epochs with batches of 32.
    pub fn reranker() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 5,
            patience: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return Err(Error::Config(format!(
                "decision_threshold must lie in [0, 1], got {}",
                self.decision_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dev_r5: f64,
    pub dev_if1: f64,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Dev scores of the parameters before any update.
    pub initial_dev_r5: f64,
    pub initial_dev_if1: f64,
    /// Epoch whose parameters were returned (0 = the starting parameters); `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    /// Training examples fed through the optimizer, summed over epochs.
    pub examples_processed: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.and_then(|b| self.epochs.iter().find(|e| e.epoch == b))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,dev_r5,dev_if1,seconds\n");
        for e in &self.epochs {
            let secs = e.seconds.map(|v| format!("{v:.3}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:.6},{:.6},{:.6},{secs}", e.epoch, e.loss, e.dev_r5, e.dev_if1);
        }
        s
    }
}
