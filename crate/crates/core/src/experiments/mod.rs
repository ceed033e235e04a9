//! Reproductions of the numerical studies: the scalar motivating example,
//! offline estimation on the batch reactor and random LTI systems, and
//! online estimation on the CSTR and the quadrotor.

mod offline;
mod online;
mod scalar;

pub use offline::{lti_run, reactor_run, LtiConfig, LtiRun, ReactorConfig, ReactorRun};
pub use online::{online_study, OnlineStudy, OnlineStudyConfig, PriorSampling};
pub use scalar::{motivating_study, scalar_benchmark, scalar_example_data, MotivatingStudy, ScalarConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Vector;
use crate::simulate::split_seed;
use crate::types::EstimateSequence;

/// One estimator's output on one data batch with its headline metrics.
#[derive(Debug, Clone)]
pub struct SchemeOutcome {
    pub scheme: String,
    pub sequence: EstimateSequence,
    pub metrics: SchemeMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeMetrics {
    pub scheme: String,
    pub sse: f64,
    /// Performance `J` on the evaluation range, when defined.
    pub performance: Option<f64>,
    /// Regret per step against the benchmark, when one exists.
    pub regret_per_step: Option<f64>,
    /// Wall-clock seconds (excluded from digests).
    pub runtime: f64,
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile; NaN for empty input.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Uniform draw on `[center - half, center + half]` per component from the
/// `label` stream of `seed`.
pub fn draw_box(seed: u64, label: &str, center: &[f64], half: &[f64]) -> Vector {
    let mut rng = split_seed(seed, label);
    Vector::from_fn(center.len(), |i, _| {
        let u: f64 = rng.random();
        center[i] - half[i] + 2.0 * half[i] * u
    })
}
