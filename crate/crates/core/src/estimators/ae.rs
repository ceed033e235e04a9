//! Approximate offline estimator: concatenates the middle blocks of
//! independent window solutions, solved on a worker pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{batch_digest, digest};
use crate::linalg::Vector;
use crate::models::SystemModel;
use crate::solver::{solve_auto, HorizonProblem, SolverOptions};
use crate::types::{CostSpec, DataBatch, EstimateSequence, EstimatorKind, HorizonSolution};

use super::warm_start_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeConfig {
    /// Window length (even).
    pub n: usize,
    /// Half-width of the block kept from each window.
    pub delta: usize,
}

/// One planned window with the relative index range it contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeWindow {
    /// Window start relative to the data start.
    pub start: usize,
    /// Kept range, inclusive, relative to the data start.
    pub keep: (usize, usize),
}

/// Windows for data indices `0..=t_last`: starts at multiples of
/// `2Δ+1`, kept blocks `[N/2-Δ, N/2+Δ]`, with the first and last windows
/// extended to the data boundaries. When `t_last - N` is not a multiple of
/// `2Δ+1`, one extra window ending at `t_last` covers the remainder.
pub fn plan_windows(t_last: usize, cfg: AeConfig) -> Result<Vec<AeWindow>> {
    let AeConfig { n, delta } = cfg;
    if n % 2 != 0 {
        return Err(Error::InvalidConfig(format!("window length N = {n} must be even")));
    }
    if delta > n / 2 {
        return Err(Error::InvalidConfig(format!("Δ = {delta} exceeds N/2 = {}", n / 2)));
    }
    if t_last < n {
        return Err(Error::InvalidConfig(format!("data length T = {t_last} is shorter than N = {n}")));
    }
    let stride = 2 * delta + 1;
    let half = n / 2;
    let last_start = t_last - n;
    let mut windows = Vec::new();
    let mut start = 0;
    let mut covered_to: Option<usize> = None;
    while start <= last_start {
        let lo = covered_to.map_or(0, |c| c + 1);
        let hi = if start == last_start { t_last } else { start + half + delta };
        windows.push(AeWindow { start, keep: (lo, hi) });
        covered_to = Some(hi);
        start += stride;
    }
    if let Some(c) = covered_to {
        if c < t_last {
            windows.push(AeWindow { start: last_start, keep: (c + 1, t_last) });
        }
    }
    Ok(windows)
}

#[derive(Debug, Clone)]
pub struct AeResult {
    pub sequence: EstimateSequence,
    pub windows: Vec<AeWindow>,
    pub solutions: Vec<HorizonSolution>,
}

/// Solves all planned windows on `workers` threads (index-ordered
/// aggregation, so the result does not depend on the worker count).
/// `initial_guess` warm-starts nonlinear window solves.
pub fn approximate_estimator(
    model: &SystemModel,
    data: &DataBatch,
    cost: &CostSpec,
    cfg: AeConfig,
    workers: usize,
    options: &SolverOptions,
    initial_guess: Option<&EstimateSequence>,
) -> Result<AeResult> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty data batch".into()));
    }
    let windows = plan_windows(data.len() - 1, cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let solve = |w: &AeWindow| -> Result<HorizonSolution> {
        let (a, b) = (w.start, w.start + cfg.n);
        let t_a = data.t0 + a as i64;
        let inputs = &data.inputs[a..=b];
        let warm = match initial_guess {
            Some(seq) => Some(warm_start_from(model, seq, inputs, t_a, data.t0 + b as i64)?),
            None => None,
        };
        let problem = HorizonProblem {
            model,
            start: t_a,
            inputs,
            outputs: &data.outputs[a..=b],
            cost,
            prior: None,
            options: options.clone(),
        };
        solve_auto(&problem, warm.as_ref()).map_err(Error::solver_at(data.t0 + b as i64))
    };
    let solutions: Vec<HorizonSolution> =
        pool.install(|| windows.par_iter().map(solve).collect::<Result<Vec<_>>>())?;
    let mut states: Vec<Vector> = Vec::with_capacity(data.len());
    for (w, sol) in windows.iter().zip(&solutions) {
        for j in w.keep.0..=w.keep.1 {
            states.push(sol.xs[j - w.start].clone());
        }
    }
    debug_assert_eq!(states.len(), data.len());
    let config = json!({
        "model": model.id(),
        "cost": cost.record(),
        "ae": cfg,
        "solver": options,
        "data": batch_digest(data),
    });
    let sequence = EstimateSequence {
        kind: EstimatorKind::Ae,
        delay: 0,
        start: data.t0,
        states,
        disturbances: None,
        config_digest: digest(&config),
        label: format!("ae-N{}-D{}", cfg.n, cfg.delta),
    };
    Ok(AeResult { sequence, windows, solutions })
}
