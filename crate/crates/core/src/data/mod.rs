//! Cohort records, synthetic generation, splitting and CSV ingestion.

mod csv_io;
mod generate;
mod split;

pub use csv_io::{read_csv, read_csv_from, write_csv, write_csv_to};
pub use generate::{
    default_sites, generate_cohort, generate_site, GeneratorSpec, Marginals, SiteSpec,
    DEFAULT_BETA, DEFAULT_INTERCEPT,
};
pub use split::{
    kfold_indices, kfold_split, partition_sites, pool, split_indices, split_train_valid,
    SitePartition,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_FEATURES: usize = 10;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "age",
    "gender",
    "diabetes_e10_e14",
    "dyslipidemia_e78",
    "atc_a10",
    "atc_c09",
    "atc_c10",
    "comorbidity_a",
    "comorbidity_b",
    "comorbidity_c",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("cannot split: {0}")]
    Split(String),
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub features: [f64; N_FEATURES],
    pub label: u8,
}

impl Record {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Labeled 10-feature rows with their column names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortDataset {
    feature_names: Vec<String>,
    rows: Vec<Record>,
}

impl Default for CohortDataset {
    fn default() -> Self {
        CohortDataset {
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

impl CohortDataset {
    /// Dataset with the default feature names.
    pub fn new(rows: Vec<Record>) -> Result<Self, DataError> {
        Self::with_names(FEATURE_NAMES.iter().map(|s| s.to_string()).collect(), rows)
    }

    pub fn with_names(feature_names: Vec<String>, rows: Vec<Record>) -> Result<Self, DataError> {
        if feature_names.len() != N_FEATURES {
            return Err(DataError::Invalid(format!(
                "expected {N_FEATURES} feature names, got {}",
                feature_names.len()
            )));
        }
        if let Some(i) = rows
            .iter()
            .position(|r| r.label > 1 || r.features.iter().any(|v| !v.is_finite()))
        {
            return Err(DataError::Invalid(format!("row {} has a non-binary label or non-finite feature", i + 1)));
        }
        Ok(CohortDataset { feature_names, rows })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn n_positive(&self) -> usize {
        self.rows.iter().filter(|r| r.is_positive()).count()
    }

    pub fn n_negative(&self) -> usize {
        self.len() - self.n_positive()
    }

    /// Subset by row indices, in the given order. Indices come from the split
    /// routines and are always in range.
    pub fn select(&self, idx: &[usize]) -> CohortDataset {
        CohortDataset {
            feature_names: self.feature_names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}
