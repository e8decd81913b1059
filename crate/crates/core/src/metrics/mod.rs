//! Ranking and set-based evaluation measures, breakdowns and label-quality checks.

mod breakdown;
mod consistency;
mod oracle;
mod ranking;
mod record;
mod report;
mod stats;

pub use breakdown::{breakdown, breakdown_csv, GroupKey, GroupRow, DEFAULT_BUCKETS};
pub use consistency::{consistency_check, level3_inconsistent, matched_code_pairs, ConsistencyReport};
pub use oracle::oracle_recall;
pub use ranking::{
    auc, auc_macro, auc_micro, instance_f1, macro_f1, micro_f1, per_label_counts, pooled_counts, recall_at_k,
    record_f1, Counts,
};
pub use record::{first_visit_flags, read_records, record_id, write_records, PredictionRecord};
pub use report::{evaluate, mean_instance_f1, mean_recall_at_k, MetricsReport};
pub use stats::{average_ranks, metric_histogram, score_histogram, spearman, Histogram, RecordMetric};
