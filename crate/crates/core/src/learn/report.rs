use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::Metric;
use crate::model::{ModelKind, Task};

/// One row of the final report: a metric summarized over repeated runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: ModelKind,
    pub task: Task,
    pub metric: String,
    pub mean: Metric,
    /// Sample standard deviation (0 for a single run).
    pub std: Metric,
    /// Runs with a non-empty metric.
    pub runs: usize,
}

impl ReportRow {
    /// Summarizes per-run metrics; empty runs are left out.
    pub fn summarize(model: ModelKind, task: Task, runs: &[Metric]) -> ReportRow {
        let values: Vec<f64> = runs.iter().filter_map(|m| m.value()).collect();
        let n = values.len();
        let (mean, std) = if n == 0 {
            (Metric::Empty, Metric::Empty)
        } else {
            let mean = values.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            (Metric::Value(mean), Metric::Value(std))
        };
        ReportRow {
            model,
            task,
            metric: task.metric_name().to_string(),
            mean,
            std,
            runs: n,
        }
    }
}

pub const REPORT_HEADER: &str = "model\ttask\tmetric\tmean\tstd\truns";

fn task_name(task: Task) -> &'static str {
    match task {
        Task::SpeedEstimation => "speed_estimation",
        Task::SpeedLimit => "speed_limit",
    }
}

/// Tab-separated report with a header line.
pub fn write_report(rows: &[ReportRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}\t{}\t{}\t{}", r.model, task_name(r.task), r.metric, r.mean, r.std, r.runs)?;
    }
    Ok(())
}
