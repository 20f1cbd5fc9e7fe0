//! Training protocol: initialization, optimization, batching, metrics.

pub mod adam;
pub mod batching;
pub mod init;
pub mod metrics;
pub mod report;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batching::{early_stopping_select, oversample, stratified_batches};
pub use init::{xavier_init, xavier_uniform};
pub use metrics::{argmax_rows, macro_f1, mae_per_segment, Metric, MIN_OBSERVATIONS};
pub use report::{write_report, ReportRow, REPORT_HEADER};
pub use train::{evaluate, fit_grouping, train, EdgeTargets, EpochRecord, MetricHistory, Predictions, Stratify, TrainConfig, Trained};
