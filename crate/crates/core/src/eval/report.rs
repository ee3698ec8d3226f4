use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{summarize, MetricSet, Summary};
use crate::param::ParamSet;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// What one client reported for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundRecord {
    pub client: String,
    /// Received global model on the local validation split, before training.
    pub pre_train: MetricSet,
    /// Locally trained model on the same split.
    pub post_train: MetricSet,
    pub steps: usize,
    pub weight: f64,
    /// Serialized update payload (post-encryption in HE mode).
    pub payload_bytes: u64,
    pub train_seconds: f64,
    /// DP filtering or encryption time.
    pub privacy_seconds: f64,
    /// Time spent decrypting the incoming aggregate (HE mode only).
    pub decrypt_seconds: f64,
    /// Arrival time at the server, relative to the round's broadcast.
    pub arrival_offset_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub clients: Vec<ClientRoundRecord>,
    /// When aggregation started, relative to the round's broadcast.
    pub aggregation_offset_seconds: f64,
    pub aggregation_seconds: f64,
}

impl RoundRecord {
    pub fn payload_bytes(&self) -> u64 {
        self.clients.iter().map(|c| c.payload_bytes).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSiteRow {
    pub site: String,
    pub metrics: MetricSet,
}

/// Final global model evaluated on every site's validation split, with the
/// mean ± sample std across sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSiteTable {
    pub rows: Vec<CrossSiteRow>,
    pub summary: Summary,
}

impl CrossSiteTable {
    pub fn from_rows(rows: Vec<CrossSiteRow>) -> Self {
        let sets: Vec<MetricSet> = rows.iter().map(|r| r.metrics.clone()).collect();
        CrossSiteTable {
            summary: summarize(&sets),
            rows,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// `FedAvg`, `FedAvg_DP` or `FedAvg_HE`.
    pub method: String,
    /// `LR` or `NN`.
    pub learner: String,
    pub config: serde_json::Value,
    pub initial_params: ParamSet,
    pub rounds: Vec<RoundRecord>,
    pub cross_site: Option<CrossSiteTable>,
    pub final_params: Option<ParamSet>,
    /// Set when the run stopped early; `rounds` then holds the completed ones.
    pub aborted: Option<String>,
    pub total_wall_seconds: f64,
}

impl RunReport {
    /// Copy with every wall-clock field zeroed, for comparing runs.
    pub fn without_timings(&self) -> RunReport {
        let mut r = self.clone();
        r.total_wall_seconds = 0.0;
        for round in &mut r.rounds {
            round.aggregation_offset_seconds = 0.0;
            round.aggregation_seconds = 0.0;
            for c in &mut round.clients {
                c.train_seconds = 0.0;
                c.privacy_seconds = 0.0;
                c.decrypt_seconds = 0.0;
                c.arrival_offset_seconds = 0.0;
            }
        }
        r
    }

    pub fn summary_row(&self) -> Option<SummaryRow> {
        self.cross_site
            .as_ref()
            .map(|t| SummaryRow::new(&self.method, &self.learner, &t.summary))
    }

    pub fn timing_row(&self) -> TimingRow {
        let mut t = TimingRow {
            method: self.method.clone(),
            learner: self.learner.clone(),
            rounds: self.rounds.len(),
            total_seconds: self.total_wall_seconds,
            ..Default::default()
        };
        let max = |f: fn(&ClientRoundRecord) -> f64, r: &RoundRecord| r.clients.iter().map(f).fold(0.0, f64::max);
        for r in &self.rounds {
            t.train_seconds += max(|c| c.train_seconds, r);
            t.privacy_seconds += max(|c| c.privacy_seconds, r);
            t.decrypt_seconds += max(|c| c.decrypt_seconds, r);
            t.aggregation_seconds += r.aggregation_seconds;
            t.payload_bytes_total += r.payload_bytes();
        }
        let accounted = t.train_seconds + t.privacy_seconds + t.decrypt_seconds + t.aggregation_seconds;
        t.other_seconds = (t.total_seconds - accounted).max(0.0);
        t.payload_bytes_per_round = if t.rounds > 0 { t.payload_bytes_total / t.rounds as u64 } else { 0 };
        t
    }
}

/// Centralized 10-fold cross-validation baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralReport {
    pub method: String,
    pub learner: String,
    pub config: serde_json::Value,
    pub folds: Vec<MetricSet>,
    pub summary: Summary,
    pub total_wall_seconds: f64,
}

impl CentralReport {
    pub fn summary_row(&self) -> SummaryRow {
        SummaryRow::new(&self.method, &self.learner, &self.summary)
    }
}

/// One `summary.csv` line: a method/learner pair with mean ± std metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub learner: String,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub sens_mean: f64,
    pub sens_std: f64,
    pub spec_mean: f64,
    pub spec_std: f64,
}

impl SummaryRow {
    pub fn new(method: &str, learner: &str, s: &Summary) -> Self {
        SummaryRow {
            method: method.to_string(),
            learner: learner.to_string(),
            auc_mean: s.auc.mean,
            auc_std: s.auc.std,
            sens_mean: s.sensitivity.mean,
            sens_std: s.sensitivity.std,
            spec_mean: s.specificity.mean,
            spec_std: s.specificity.std,
        }
    }
}

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "method", "learner", "auc_mean", "auc_std", "sens_mean", "sens_std", "spec_mean", "spec_std",
];

/// One `timings.csv` line. Per-round component times take the slowest
/// client, since the round barrier waits for it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub learner: String,
    pub rounds: usize,
    pub total_seconds: f64,
    pub train_seconds: f64,
    pub privacy_seconds: f64,
    pub decrypt_seconds: f64,
    pub aggregation_seconds: f64,
    pub other_seconds: f64,
    pub payload_bytes_total: u64,
    pub payload_bytes_per_round: u64,
}

/// One `rounds.csv` line (round × client).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundCsvRow {
    pub round: usize,
    pub client: String,
    pub pre_auc: f64,
    pub pre_sens: f64,
    pub pre_spec: f64,
    pub post_auc: f64,
    pub post_sens: f64,
    pub post_spec: f64,
    pub steps: usize,
    pub weight: f64,
    pub payload_bytes: u64,
    pub train_seconds: f64,
    pub privacy_seconds: f64,
    pub decrypt_seconds: f64,
    pub arrival_offset_seconds: f64,
    pub aggregation_seconds: f64,
}

pub fn round_rows(run: &RunReport) -> Vec<RoundCsvRow> {
    run.rounds
        .iter()
        .flat_map(|r| {
            r.clients.iter().map(move |c| RoundCsvRow {
                round: r.round,
                client: c.client.clone(),
                pre_auc: c.pre_train.auc,
                pre_sens: c.pre_train.sensitivity,
                pre_spec: c.pre_train.specificity,
                post_auc: c.post_train.auc,
                post_sens: c.post_train.sensitivity,
                post_spec: c.post_train.specificity,
                steps: c.steps,
                weight: c.weight,
                payload_bytes: c.payload_bytes,
                train_seconds: c.train_seconds,
                privacy_seconds: c.privacy_seconds,
                decrypt_seconds: c.decrypt_seconds,
                arrival_offset_seconds: c.arrival_offset_seconds,
                aggregation_seconds: r.aggregation_seconds,
            })
        })
        .collect()
}

/// Writes `rows` with a header. An empty slice still gets the header when
/// `header` is given.
pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T], header: Option<&[&str]>) -> Result<(), ReportError> {
    let fmt = |e: csv::Error| ReportError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_writer(file);
    if rows.is_empty() {
        if let Some(h) = header {
            w.write_record(h).map_err(fmt)?;
        }
    }
    for r in rows {
        w.serialize(r).map_err(fmt)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ReportError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ReportError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| ReportError::Format {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ReportError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ReportError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Paths written by [`emit_report`].
#[derive(Clone, Debug)]
pub struct ReportFiles {
    pub report_json: PathBuf,
    pub rounds_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub timings_csv: PathBuf,
}

/// Writes `report.json`, `rounds.csv`, `summary.csv` and `timings.csv`.
pub fn emit_report(run: &RunReport, out_dir: &Path) -> Result<ReportFiles, ReportError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let files = ReportFiles {
        report_json: out_dir.join("report.json"),
        rounds_csv: out_dir.join("rounds.csv"),
        summary_csv: out_dir.join("summary.csv"),
        timings_csv: out_dir.join("timings.csv"),
    };
    write_json(&files.report_json, run)?;
    write_csv_rows(&files.rounds_csv, &round_rows(run), None)?;
    let summary: Vec<SummaryRow> = run.summary_row().into_iter().collect();
    write_csv_rows(&files.summary_csv, &summary, Some(&SUMMARY_COLUMNS))?;
    write_csv_rows(&files.timings_csv, &[run.timing_row()], None)?;
    Ok(files)
}

/// Writes `central.json` and the cML `summary.csv`.
pub fn emit_central_report(report: &CentralReport, out_dir: &Path) -> Result<(PathBuf, PathBuf), ReportError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let json = out_dir.join("central.json");
    let csv = out_dir.join("summary.csv");
    write_json(&json, report)?;
    write_csv_rows(&csv, &[report.summary_row()], None)?;
    Ok((json, csv))
}

const METHOD_ORDER: [&str; 4] = ["cML", "FedAvg", "FedAvg_DP", "FedAvg_HE"];

/// Orders summary rows learner-major (NN before LR), then by method in the
/// comparison order cML, FedAvg, FedAvg_DP, FedAvg_HE.
pub fn sort_summary_rows(rows: &mut [SummaryRow]) {
    let method_rank = |m: &str| METHOD_ORDER.iter().position(|x| *x == m).unwrap_or(METHOD_ORDER.len());
    let learner_rank = |l: &str| match l {
        "NN" => 0,
        "LR" => 1,
        _ => 2,
    };
    rows.sort_by(|a, b| {
        (learner_rank(&a.learner), method_rank(&a.method), &a.learner, &a.method).cmp(&(
            learner_rank(&b.learner),
            method_rank(&b.method),
            &b.learner,
            &b.method,
        ))
    });
}
