use serde::{Deserialize, Serialize};

use crate::analysis::{default_epsilon, turnpike_profile, TurnpikeProfile};
use crate::error::Result;
use crate::estimators::{extended_window, Benchmark, ExtendedWindowOptions};
use crate::linalg::Vector;
use crate::models::scalar_integrator;
use crate::solver::{solve_linear_horizon, HorizonProblem, SolverOptions};
use crate::types::{CostSpec, DataBatch, HorizonSolution};

/// Data of `x⁺ = x + w`, `y = x + v` with `w = v = 1` and `x_0 = 1` on
/// `[a, b]`, extended to negative times by the same recursion.
pub fn scalar_example_data(a: i64, b: i64) -> DataBatch {
    let len = (b - a + 1).max(0) as usize;
    let v = |x: f64| Vector::from_element(1, x);
    DataBatch {
        t0: a,
        inputs: vec![Vector::zeros(0); len],
        outputs: (a..=b).map(|t| v((t + 2) as f64)).collect(),
        truth: Some(crate::types::Truth {
            states: (a..=b).map(|t| v((t + 1) as f64)).collect(),
            disturbances: vec![v(1.0); len.saturating_sub(1)],
            noise: vec![v(1.0); len],
        }),
        meta: crate::types::BatchMeta { model: "scalar".into(), seed: None, generation: serde_json::json!("closed form") },
    }
}

/// Infinite-horizon solution on `[0, t_final]` by window extension.
pub fn scalar_benchmark(t_final: i64, opts: &ExtendedWindowOptions) -> Result<Benchmark> {
    let model = scalar_integrator();
    extended_window(&model, &CostSpec::identity(1, 1), 0, t_final, |a, b| Ok(scalar_example_data(a, b)), opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalarConfig {
    pub t_final: i64,
    pub horizons: Vec<usize>,
    pub benchmark: ExtendedWindowOptions,
}

impl Default for ScalarConfig {
    fn default() -> Self {
        Self { t_final: 30, horizons: vec![10, 20, 30], benchmark: ExtendedWindowOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct MotivatingStudy {
    pub benchmark: Benchmark,
    /// Solution of the window `[0, N]` per horizon.
    pub windows: Vec<(usize, HorizonSolution)>,
    pub profiles: Vec<(usize, TurnpikeProfile)>,
}

/// Window solutions on `[0, N]` compared with the infinite-horizon solution.
pub fn motivating_study(cfg: &ScalarConfig) -> Result<MotivatingStudy> {
    let model = scalar_integrator();
    let cost = CostSpec::identity(1, 1);
    let last = cfg.horizons.iter().copied().max().unwrap_or(0) as i64;
    let benchmark = scalar_benchmark(cfg.t_final.max(last), &cfg.benchmark)?;
    let data = scalar_example_data(0, last);
    let epsilon = default_epsilon(&scalar_example_data(0, cfg.t_final));
    let mut windows = Vec::new();
    let mut profiles = Vec::new();
    for &n in &cfg.horizons {
        let (inputs, outputs) = data.window(0, n as i64)?;
        let problem =
            HorizonProblem { model: &model, start: 0, inputs, outputs, cost: &cost, prior: None, options: SolverOptions::default() };
        let sol = solve_linear_horizon(&problem).map_err(crate::error::Error::solver_at(n as i64))?;
        profiles.push((n, turnpike_profile(std::slice::from_ref(&sol), &benchmark.sequence, epsilon)?));
        windows.push((n, sol));
    }
    Ok(MotivatingStudy { benchmark, windows, profiles })
}
