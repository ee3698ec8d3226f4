//! Core building blocks for privacy-preserving federated averaging on
//! tabular binary-outcome data: parameter layouts and deltas, the two local
//! learners, the SVT privacy filter, synthetic cohorts and splits, and the
//! metrics/report layer.

pub mod data;
pub mod dp;
pub mod eval;
pub mod exec;
pub mod learners;
pub mod param;
pub mod rng;

pub use exec::Exec;
pub use learners::ModelKind;
pub use param::{FlatVector, LayoutManifest, ParamSet};
