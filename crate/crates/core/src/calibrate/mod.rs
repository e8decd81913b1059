//! Label-wise isotonic calibration and selective exact-match automation.

mod automation;
mod isotonic;

pub use automation::{
    automate, automation_csv, decide_exact_match, evaluate_automation, grid_value, search_thresholds,
    AutomationReport, AutomationResult, AutomationRow, Provenance, SearchOutcome, ThresholdRule, GRID_STEPS,
};
pub use isotonic::{ece, fit_isotonic, pav, Block, IsotonicFit, IsotonicMap, ECE_BINS};
