//! Online estimators: full information estimation and moving horizon
//! estimation with optional delay and prior weighting.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{batch_digest, digest};
use crate::linalg::{Matrix, Vector};
use crate::models::SystemModel;
use crate::solver::{solve_auto, HorizonProblem, QuadraticPrior, SolverOptions, WarmStart};
use crate::types::{CostSpec, DataBatch, EstimateSequence, EstimatorKind, HorizonSolution};

use super::kalman::{update_prior_weight_ekf, WeightUpdate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// Last state of the solution computed `N` steps earlier.
    Filtering,
    /// Window-start element of the previous solution.
    Smoothing,
    /// Window-start element of the solution computed `N/2` steps earlier,
    /// i.e. that solution's midpoint.
    Turnpike,
}

impl PriorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PriorKind::Filtering => "filtering",
            PriorKind::Smoothing => "smoothing",
            PriorKind::Turnpike => "turnpike",
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "filtering" => Ok(PriorKind::Filtering),
            "smoothing" => Ok(PriorKind::Smoothing),
            "turnpike" => Ok(PriorKind::Turnpike),
            other => Err(Error::InvalidConfig(format!("unknown prior `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub kind: PriorKind,
    /// Initial prior mean `x̄_0`.
    pub mean: Vector,
    /// Initial weight `W_0`.
    pub weight: Matrix,
    pub update: WeightUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    /// Window length `N`; `None` solves over all data so far.
    pub horizon: Option<usize>,
    /// Publication delays; one estimate sequence is produced per entry.
    pub delays: Vec<usize>,
    pub prior: Option<PriorConfig>,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Retain every window solution in the run output.
    #[serde(default)]
    pub keep_solutions: bool,
}

impl OnlineConfig {
    pub fn new(horizon: Option<usize>, delays: Vec<usize>) -> Self {
        Self { horizon, delays, prior: None, solver: SolverOptions::default(), keep_solutions: false }
    }

    fn validate(&self, model: &SystemModel) -> Result<()> {
        if self.delays.is_empty() {
            return Err(Error::InvalidConfig("at least one delay is required".into()));
        }
        if let Some(n) = self.horizon {
            if let Some(&d) = self.delays.iter().find(|&&d| 2 * d > n) {
                return Err(Error::InvalidConfig(format!("delay {d} exceeds N/2 = {}", n / 2)));
            }
        }
        if let Some(p) = &self.prior {
            let dim = model.dims().n;
            if p.mean.len() != dim || p.weight.nrows() != dim || p.weight.ncols() != dim {
                return Err(Error::InvalidConfig(format!("prior must have dimension {dim}")));
            }
            if p.kind == PriorKind::Turnpike {
                match self.horizon {
                    Some(n) if n >= 2 && n % 2 == 0 => {}
                    _ => return Err(Error::InvalidConfig("turnpike prior needs an even horizon N >= 2".into())),
                }
            }
            if model.state_set().is_bounded() && !model.state_set().contains(&p.mean, 1e-9) {
                return Err(Error::InvalidConfig("initial prior mean lies outside the state set".into()));
            }
        }
        Ok(())
    }
}

/// Prior used by the window solved at time `t`, starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorRecord {
    pub t: i64,
    pub start: i64,
    pub mean: Vector,
    pub weight: Matrix,
}

#[derive(Debug, Clone)]
pub struct OnlineRun {
    /// One sequence per configured delay, in configuration order.
    pub estimates: Vec<EstimateSequence>,
    pub priors: Vec<PriorRecord>,
    /// Window solutions (only with `keep_solutions`).
    pub solutions: Vec<HorizonSolution>,
    pub total_iterations: usize,
    pub max_violation: f64,
    /// Times at which the EKF weight update had to be regularized.
    pub regularized: Vec<i64>,
}

struct Buffered {
    k: usize,
    solution: HorizonSolution,
    weight_index: usize,
}

/// Sequential consume-and-publish state machine over a data batch.
pub struct OnlineEstimator<'a> {
    model: &'a SystemModel,
    data: &'a DataBatch,
    cost: &'a CostSpec,
    config: &'a OnlineConfig,
    next: usize,
    buffer: VecDeque<Buffered>,
    depth: usize,
    /// EKF weight chain indexed by relative window start.
    weights: Vec<Matrix>,
    last_mean: Option<Vector>,
    regularized: Vec<i64>,
}

/// Result of consuming one more data point.
pub struct Step<'s> {
    pub t: i64,
    pub solution: &'s HorizonSolution,
    pub prior: Option<PriorRecord>,
    /// `(delay, time, estimate)` triples published at this step.
    pub published: Vec<(usize, i64, Vector)>,
}

impl<'a> OnlineEstimator<'a> {
    pub fn new(model: &'a SystemModel, data: &'a DataBatch, cost: &'a CostSpec, config: &'a OnlineConfig) -> Result<Self> {
        config.validate(model)?;
        if data.is_empty() {
            return Err(Error::InvalidConfig("empty data batch".into()));
        }
        let depth = match (&config.prior, config.horizon) {
            (Some(p), Some(n)) => match p.kind {
                PriorKind::Filtering => n + 1,
                PriorKind::Smoothing => 2,
                PriorKind::Turnpike => n / 2 + 1,
            },
            _ => 2,
        };
        let weights = config.prior.as_ref().map(|p| vec![p.weight.clone()]).unwrap_or_default();
        Ok(Self {
            model,
            data,
            cost,
            config,
            next: 0,
            buffer: VecDeque::with_capacity(depth + 1),
            depth,
            weights,
            last_mean: None,
            regularized: Vec::new(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.next >= self.data.len()
    }

    fn window_start(&self, k: usize) -> usize {
        match self.config.horizon {
            Some(n) => k.saturating_sub(n),
            None => 0,
        }
    }

    fn buffered(&self, k: usize) -> &Buffered {
        self.buffer.iter().find(|b| b.k == k).expect("prior source retained in buffer")
    }

    /// Prior mean for the window solved at relative time `k` and the index
    /// of the weight to pair with it.
    fn prior_mean(&self, prior: &PriorConfig, k: usize, s: usize) -> (Vector, usize) {
        let state_at = |b: &Buffered, s: usize| b.solution.xs[s - self.window_start(b.k)].clone();
        match (prior.kind, self.config.horizon) {
            (PriorKind::Filtering, Some(n)) if k >= n => (self.buffered(k - n).solution.last_state().clone(), s),
            (PriorKind::Smoothing, _) if k >= 1 => (state_at(self.buffered(k - 1), s), s),
            (PriorKind::Turnpike, Some(n)) if k >= n / 2 => {
                let b = self.buffered(k - n / 2);
                (state_at(b, s), b.weight_index)
            }
            _ => (prior.mean.clone(), s),
        }
    }

    fn advance_weights(&mut self, prior: &PriorConfig, s: usize) -> Result<()> {
        while self.weights.len() <= s {
            let prev = self.weights.len() - 1;
            let next = match prior.update {
                WeightUpdate::Constant => prior.weight.clone(),
                WeightUpdate::Ekf => {
                    let mean = self.last_mean.clone().unwrap_or_else(|| prior.mean.clone());
                    let (w, flagged) =
                        update_prior_weight_ekf(self.model, &mean, &self.weights[prev], &self.data.inputs[prev], self.cost)?;
                    if flagged {
                        self.regularized.push(self.data.t0 + prev as i64 + 1);
                    }
                    w
                }
            };
            self.weights.push(next);
        }
        Ok(())
    }

    /// Consumes the next data point, solves its window and publishes the
    /// delayed estimates that became available.
    pub fn step(&mut self) -> Result<Step<'_>> {
        let k = self.next;
        if k >= self.data.len() {
            return Err(Error::OutOfRange(self.data.t0 + k as i64));
        }
        let t = self.data.t0 + k as i64;
        let s = self.window_start(k);
        let prior = match &self.config.prior {
            None => None,
            Some(p) => {
                self.advance_weights(p, s)?;
                let (mean, wi) = self.prior_mean(p, k, s);
                Some((mean, wi))
            }
        };
        let prior_record = prior.as_ref().map(|(mean, wi)| PriorRecord {
            t,
            start: self.data.t0 + s as i64,
            mean: mean.clone(),
            weight: self.weights[*wi].clone(),
        });
        let quadratic = match &prior {
            Some((mean, wi)) => Some(QuadraticPrior::new(mean.clone(), self.weights[*wi].clone()).map_err(Error::solver_at(t))?),
            None => None,
        };
        let warm = self.buffer.back().map(|prev| {
            if self.window_start(prev.k) == s {
                WarmStart::extended(&prev.solution)
            } else {
                WarmStart::shifted(&prev.solution)
            }
        });
        let problem = HorizonProblem {
            model: self.model,
            start: self.data.t0 + s as i64,
            inputs: &self.data.inputs[s..=k],
            outputs: &self.data.outputs[s..=k],
            cost: self.cost,
            prior: quadratic,
            options: self.config.solver.clone(),
        };
        let solution = solve_auto(&problem, warm.as_ref()).map_err(Error::solver_at(t))?;
        self.last_mean = prior.map(|(m, _)| m);
        let mut published = Vec::new();
        for &d in &self.config.delays {
            if k >= d {
                published.push((d, t - d as i64, solution.xs[k - d - s].clone()));
            }
        }
        self.buffer.push_back(Buffered { k, solution, weight_index: self.weights.len().saturating_sub(1) });
        while self.buffer.len() > self.depth {
            self.buffer.pop_front();
        }
        self.next += 1;
        let solution = &self.buffer.back().expect("just pushed").solution;
        Ok(Step { t, solution, prior: prior_record, published })
    }
}

fn kind_of(config: &OnlineConfig, delay: usize) -> EstimatorKind {
    match (&config.prior, config.horizon) {
        (Some(_), _) => EstimatorKind::MhePrior,
        (None, None) => EstimatorKind::Fie,
        (None, Some(_)) if delay == 0 => EstimatorKind::Mhe,
        (None, Some(_)) => EstimatorKind::DelayedMhe,
    }
}

fn label_of(config: &OnlineConfig, delay: usize) -> String {
    let base = match config.horizon {
        Some(n) => format!("{}-N{n}", kind_of(config, delay).as_str()),
        None => kind_of(config, delay).as_str().to_string(),
    };
    match &config.prior {
        Some(p) => format!("{base}-{}-d{delay}", p.kind.as_str()),
        None if delay > 0 => format!("{base}-d{delay}"),
        None => base,
    }
}

/// Runs an online estimator over the whole batch.
pub fn run_online(model: &SystemModel, data: &DataBatch, cost: &CostSpec, config: &OnlineConfig) -> Result<OnlineRun> {
    let mut est = OnlineEstimator::new(model, data, cost, config)?;
    let mut states: Vec<Vec<Vector>> = vec![Vec::with_capacity(data.len()); config.delays.len()];
    let mut run = OnlineRun {
        estimates: Vec::new(),
        priors: Vec::new(),
        solutions: Vec::new(),
        total_iterations: 0,
        max_violation: 0.0,
        regularized: Vec::new(),
    };
    while !est.is_done() {
        let step = est.step()?;
        run.total_iterations += step.solution.stats.iterations;
        run.max_violation = run.max_violation.max(step.solution.stats.max_violation);
        for (slot, (_, _, x)) in config.delays.iter().enumerate().filter_map(|(i, d)| {
            step.published.iter().find(|p| p.0 == *d).map(|p| (i, p))
        }) {
            states[slot].push(x.clone());
        }
        if let Some(p) = step.prior {
            run.priors.push(p);
        }
        if config.keep_solutions {
            run.solutions.push(step.solution.clone());
        }
    }
    run.regularized = est.regularized;
    let data_digest = batch_digest(data);
    for (slot, &d) in config.delays.iter().enumerate() {
        let cfg = json!({
            "model": model.id(),
            "cost": cost.record(),
            "horizon": config.horizon,
            "delay": d,
            "prior": config.prior,
            "solver": config.solver,
            "data": data_digest,
        });
        run.estimates.push(EstimateSequence {
            kind: kind_of(config, d),
            delay: d,
            start: data.t0,
            states: std::mem::take(&mut states[slot]),
            disturbances: None,
            config_digest: digest(&cfg),
            label: label_of(config, d),
        });
    }
    Ok(run)
}

fn single(model: &SystemModel, data: &DataBatch, cost: &CostSpec, config: OnlineConfig) -> Result<EstimateSequence> {
    let mut run = run_online(model, data, cost, &config)?;
    Ok(run.estimates.remove(0))
}

/// Full information estimation: last state of the window `[0, t]` for every `t`.
pub fn fie(model: &SystemModel, data: &DataBatch, cost: &CostSpec, options: &SolverOptions) -> Result<EstimateSequence> {
    let config = OnlineConfig { solver: options.clone(), ..OnlineConfig::new(None, vec![0]) };
    single(model, data, cost, config)
}

/// Moving horizon estimation with window length `n` (growing windows before `t = n`).
pub fn mhe(model: &SystemModel, data: &DataBatch, cost: &CostSpec, n: usize, options: &SolverOptions) -> Result<EstimateSequence> {
    let config = OnlineConfig { solver: options.clone(), ..OnlineConfig::new(Some(n), vec![0]) };
    single(model, data, cost, config)
}

/// MHE publishing the window element `N - δ`, i.e. the estimate for `t - δ`.
pub fn delayed_mhe(
    model: &SystemModel,
    data: &DataBatch,
    cost: &CostSpec,
    n: usize,
    delay: usize,
    options: &SolverOptions,
) -> Result<EstimateSequence> {
    let config = OnlineConfig { solver: options.clone(), ..OnlineConfig::new(Some(n), vec![delay]) };
    single(model, data, cost, config)
}

/// Prior-weighted MHE with delay `delay`.
pub fn mhe_prior(
    model: &SystemModel,
    data: &DataBatch,
    cost: &CostSpec,
    n: usize,
    prior: PriorConfig,
    delay: usize,
    options: &SolverOptions,
) -> Result<EstimateSequence> {
    let config = OnlineConfig { prior: Some(prior), solver: options.clone(), ..OnlineConfig::new(Some(n), vec![delay]) };
    single(model, data, cost, config)
}
