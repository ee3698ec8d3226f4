//! Metrics, run records and report files.

mod metrics;
mod report;

pub use metrics::{auc, sensitivity_specificity, summarize, MeanStd, MetricError, MetricSet, Summary};
pub use report::{
    emit_central_report, emit_report, read_csv_rows, read_json, round_rows, sort_summary_rows, write_csv_rows,
    write_json, CentralReport, ClientRoundRecord, CrossSiteRow, CrossSiteTable, ReportError, ReportFiles,
    RoundCsvRow, RoundRecord, RunReport, SummaryRow, TimingRow, SUMMARY_COLUMNS,
};

use crate::data::CohortDataset;
use crate::exec::Exec;
use crate::learners::{predict_batch, LearnerError, ModelKind};
use crate::param::ParamSet;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Scores a model on a dataset and computes its metrics.
pub fn evaluate_model(
    kind: ModelKind,
    params: &ParamSet,
    data: &CohortDataset,
    threshold: f64,
    exec: Exec,
) -> Result<MetricSet, EvalError> {
    let scores = predict_batch(kind, params, data, exec)?;
    Ok(MetricSet::evaluate(&scores, &data.labels(), threshold)?)
}
