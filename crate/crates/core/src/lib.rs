//! Finite-horizon optimal state estimation with turnpike diagnostics.
//!
//! The crate covers moving horizon estimation (standard, delayed and with
//! prior weighting), full information estimation, an omniscient
//! infinite-horizon benchmark, an offline approximate estimator built from
//! overlapping window solutions, and Kalman filter/smoother baselines,
//! together with the metrics used to compare them.

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod models;
pub mod simulate;
pub mod solver;
pub mod types;

pub use error::{Error, ModelError, Result, SolverError};
pub use linalg::{Matrix, Vector};
pub use models::SystemModel;
pub use types::{CostSpec, DataBatch, EstimateSequence, EstimatorKind, HorizonSolution};
