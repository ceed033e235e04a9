//! Estimation schemes built on the window solver: full information and
//! moving horizon estimation (with delay and prior weighting), the
//! infinite-horizon benchmark, the approximate offline estimator, and the
//! Kalman filter/smoother baselines.

pub mod ae;
pub mod ihe;
pub mod kalman;
pub mod online;

pub use ae::{approximate_estimator, plan_windows, AeConfig, AeResult, AeWindow};
pub use ihe::{clairvoyant_fie, extended_window, Benchmark, ExtendedWindowOptions};
pub use kalman::{
    ekf_weight_update, fixed_interval_smoother, kalman_filter, update_prior_weight_ekf, KalmanRun, WeightUpdate,
};
pub use online::{
    delayed_mhe, fie, mhe, mhe_prior, run_online, OnlineConfig, OnlineRun, PriorConfig, PriorKind, PriorRecord,
};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::models::SystemModel;
use crate::solver::WarmStart;
use crate::types::EstimateSequence;

/// Disturbances consistent with `states` under additive dynamics:
/// `w_j = x_{j+1} - f(x_j, u_j, 0)`.
pub fn reconstruct_disturbances(model: &SystemModel, states: &[Vector], inputs: &[Vector]) -> Result<Vec<Vector>> {
    if !model.additive_disturbance() {
        return Err(Error::Unsupported(format!(
            "disturbance reconstruction needs additive disturbances (model `{}`)",
            model.id()
        )));
    }
    states
        .windows(2)
        .zip(inputs)
        .map(|(pair, u)| Ok(&pair[1] - model.drift(&pair[0], u)?))
        .collect()
}

/// Warm start for the window `[a, b]` taken from an estimate sequence,
/// using its disturbances when present.
pub fn warm_start_from(
    model: &SystemModel,
    seq: &EstimateSequence,
    inputs: &[Vector],
    a: i64,
    b: i64,
) -> Result<WarmStart> {
    if !seq.covers(a, b) {
        return Err(Error::OutOfRange(if a < seq.start { a } else { b }));
    }
    let lo = (a - seq.start) as usize;
    let hi = (b - seq.start) as usize;
    let ws = match &seq.disturbances {
        Some(ws) if ws.len() >= hi => ws[lo..hi].to_vec(),
        _ => reconstruct_disturbances(model, &seq.states[lo..=hi], inputs)?,
    };
    Ok(WarmStart { x0: seq.states[lo].clone(), ws })
}

#[cfg(test)]
mod tests;
