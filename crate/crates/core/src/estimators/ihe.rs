//! Infinite-horizon benchmark: the acausal estimate using all data, either
//! as one clairvoyant full-information solve or as the limit of solves on
//! growing extended intervals.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{batch_digest, digest};
use crate::linalg::Vector;
use crate::models::SystemModel;
use crate::solver::{solve_auto, HorizonProblem, SolverOptions, WarmStart};
use crate::types::{CostSpec, DataBatch, EstimateSequence, EstimatorKind, HorizonSolution};

#[derive(Debug, Clone)]
pub struct Benchmark {
    /// States and disturbances on the requested range.
    pub sequence: EstimateSequence,
    /// The underlying solve (over the extended interval if any).
    pub solution: HorizonSolution,
    /// Final one-sided extension `T_e` (extended-window method only).
    pub extension: Option<usize>,
}

fn benchmark_sequence(solution: &HorizonSolution, a: i64, b: i64, config: serde_json::Value) -> EstimateSequence {
    let lo = (a - solution.start) as usize;
    let hi = (b - solution.start) as usize;
    let ws_hi = hi.min(solution.ws.len());
    EstimateSequence {
        kind: EstimatorKind::Ihe,
        delay: 0,
        start: a,
        states: solution.xs[lo..=hi].to_vec(),
        disturbances: Some(solution.ws[lo.min(ws_hi)..ws_hi].to_vec()),
        config_digest: digest(&config),
        label: "ihe".into(),
    }
}

/// One solve over the whole batch without a prior. `warm_start` (for
/// instance an online estimate) initializes the nonlinear solver.
pub fn clairvoyant_fie(
    model: &SystemModel,
    data: &DataBatch,
    cost: &CostSpec,
    options: &SolverOptions,
    warm_start: Option<&WarmStart>,
) -> Result<Benchmark> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty data batch".into()));
    }
    let problem = HorizonProblem {
        model,
        start: data.t0,
        inputs: &data.inputs,
        outputs: &data.outputs,
        cost,
        prior: None,
        options: options.clone(),
    };
    let solution = solve_auto(&problem, warm_start).map_err(Error::solver_at(data.t_end()))?;
    let config = json!({
        "method": "clairvoyant_fie",
        "model": model.id(),
        "cost": cost.record(),
        "solver": options,
        "data": batch_digest(data),
    });
    let sequence = benchmark_sequence(&solution, data.t0, data.t_end(), config);
    Ok(Benchmark { sequence, solution, extension: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtendedWindowOptions {
    /// Initial one-sided extension.
    pub initial: usize,
    pub max_doublings: usize,
    /// Convergence threshold on the largest state change over `[0, T]`.
    pub tol: f64,
    pub solver: SolverOptions,
}

impl Default for ExtendedWindowOptions {
    fn default() -> Self {
        Self { initial: 8, max_doublings: 8, tol: 1e-8, solver: SolverOptions::default() }
    }
}

/// Solves on `[t0 - e, t1 + e]` for doubling `e` until the states on
/// `[t0, t1]` stop changing. `generator(a, b)` must return data for the
/// closed interval `[a, b]` that agrees with the original data on overlap.
pub fn extended_window<G>(
    model: &SystemModel,
    cost: &CostSpec,
    t0: i64,
    t1: i64,
    mut generator: G,
    opts: &ExtendedWindowOptions,
) -> Result<Benchmark>
where
    G: FnMut(i64, i64) -> Result<DataBatch>,
{
    if t1 < t0 {
        return Err(Error::OutOfRange(t1));
    }
    let mut ext = opts.initial.max(1);
    let mut previous: Option<(Vec<Vector>, HorizonSolution)> = None;
    let mut last_delta = f64::INFINITY;
    for _ in 0..=opts.max_doublings {
        let (a, b) = (t0 - ext as i64, t1 + ext as i64);
        let data = generator(a, b)?;
        if data.t0 != a || data.t_end() != b {
            return Err(Error::InvalidConfig(format!("generator returned [{}, {}] instead of [{a}, {b}]", data.t0, data.t_end())));
        }
        let problem = HorizonProblem {
            model,
            start: a,
            inputs: &data.inputs,
            outputs: &data.outputs,
            cost,
            prior: None,
            options: opts.solver.clone(),
        };
        let solution = solve_auto(&problem, None).map_err(Error::solver_at(b))?;
        let core: Vec<Vector> = solution.xs[ext..=ext + (t1 - t0) as usize].to_vec();
        if let Some((prev, _)) = &previous {
            last_delta = core.iter().zip(prev).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max);
            if last_delta <= opts.tol {
                let config = json!({
                    "method": "extended_window",
                    "model": model.id(),
                    "cost": cost.record(),
                    "options": opts,
                    "extension": ext,
                    "data": batch_digest(&data),
                });
                let sequence = benchmark_sequence(&solution, t0, t1, config);
                return Ok(Benchmark { sequence, solution, extension: Some(ext) });
            }
        }
        previous = Some((core, solution));
        ext *= 2;
    }
    Err(Error::NoConvergence { doublings: opts.max_doublings, last_delta })
}
