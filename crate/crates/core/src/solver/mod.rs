//! Finite-horizon estimation problems solved as condensed nonlinear least
//! squares over `(x̂_0, ŵ_0, ..., ŵ_{N-1})` with Levenberg-Marquardt, plus an
//! exact path for linear models.

pub mod dense;
pub mod residuals;
pub mod structured;

use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::linalg::{sqrt_factor, Matrix, Vector};
use crate::models::SystemModel;
use crate::types::{CostSpec, HorizonSolution, SolverStats, Termination, TraceEntry};

pub use residuals::{BlockKind, ResidualBlock, ResidualStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMethod {
    /// Block-tridiagonal step for additive disturbances, dense otherwise.
    #[default]
    Auto,
    /// Same as `Auto`; the block-tridiagonal form needs `∂f/∂w = I`.
    Structured,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once the gradient norm is below `grad_tol * (1 + cost)`.
    pub grad_tol: f64,
    pub penalty_mu: f64,
    /// Initial damping; by default `1e-3` times the mean diagonal of the
    /// Gauss-Newton Hessian at the starting point.
    pub lm_lambda0: Option<f64>,
    pub method: StepMethod,
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-8,
            penalty_mu: 1e6,
            lm_lambda0: None,
            method: StepMethod::Auto,
            trace: false,
        }
    }
}

/// Prior term `|x̂_0 - mean|^2_W`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPrior {
    pub mean: Vector,
    pub weight: Matrix,
    sqrt_weight: Matrix,
}

impl QuadraticPrior {
    pub fn new(mean: Vector, weight: Matrix) -> Result<Self, SolverError> {
        let sqrt_weight = sqrt_factor(&weight)
            .ok_or_else(|| SolverError::InvalidProblem("prior weight is not positive definite".into()))?;
        Ok(Self { mean, weight, sqrt_weight })
    }

    pub fn sqrt_weight(&self) -> &Matrix {
        &self.sqrt_weight
    }

    pub fn value(&self, x0: &Vector) -> f64 {
        let d = x0 - &self.mean;
        d.dot(&(&self.weight * &d))
    }
}

/// One window `[start, start + N]` of data with its cost.
#[derive(Debug, Clone)]
pub struct HorizonProblem<'a> {
    pub model: &'a SystemModel,
    pub start: i64,
    /// `N + 1` inputs and outputs.
    pub inputs: &'a [Vector],
    pub outputs: &'a [Vector],
    pub cost: &'a CostSpec,
    pub prior: Option<QuadraticPrior>,
    pub options: SolverOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x0: Vector,
    pub ws: Vec<Vector>,
}

impl WarmStart {
    pub fn from_solution(sol: &HorizonSolution) -> Self {
        Self { x0: sol.xs[0].clone(), ws: sol.ws.clone() }
    }

    /// Drops the first stage and repeats the last disturbance; the new
    /// window starts one step later with the same length.
    pub fn shifted(sol: &HorizonSolution) -> Self {
        let mut ws: Vec<Vector> = sol.ws.iter().skip(1).cloned().collect();
        if let Some(last) = sol.ws.last() {
            ws.push(last.clone());
        }
        let x0 = sol.xs.get(1).unwrap_or(&sol.xs[0]).clone();
        Self { x0, ws }
    }

    /// Keeps the start and appends one repeated disturbance.
    pub fn extended(sol: &HorizonSolution) -> Self {
        let mut ws = sol.ws.clone();
        let q = sol.xs[0].len();
        ws.push(sol.ws.last().cloned().unwrap_or_else(|| Vector::zeros(q)));
        Self { x0: sol.xs[0].clone(), ws }
    }
}

impl HorizonProblem<'_> {
    pub fn horizon(&self) -> usize {
        self.outputs.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let dims = self.model.dims();
        let bad = |m: String| Err(SolverError::InvalidProblem(m));
        if self.outputs.is_empty() {
            return bad("window has no data".into());
        }
        if self.inputs.len() != self.outputs.len() {
            return bad(format!("{} inputs for {} outputs", self.inputs.len(), self.outputs.len()));
        }
        if self.inputs.iter().any(|u| u.len() != dims.m) || self.outputs.iter().any(|y| y.len() != dims.p) {
            return bad("data dimensions do not match the model".into());
        }
        if self.cost.q().nrows() != dims.q || self.cost.r().nrows() != dims.p {
            return bad("cost weights do not match the model".into());
        }
        if let Some(p) = &self.prior {
            if p.mean.len() != dims.n || p.weight.nrows() != dims.n {
                return bad("prior dimensions do not match the model".into());
            }
        }
        if self.options.penalty_mu.is_nan() || self.options.penalty_mu <= 0.0 {
            return bad("penalty weight must be positive".into());
        }
        Ok(())
    }

    fn use_structured(&self) -> bool {
        match self.options.method {
            StepMethod::Auto | StepMethod::Structured => self.model.additive_disturbance(),
            StepMethod::Dense => false,
        }
    }
}

/// States `x_0, ..., x_N` obtained by propagating the dynamics.
pub fn rollout(model: &SystemModel, x0: &Vector, inputs: &[Vector], ws: &[Vector]) -> Result<Vec<Vector>, SolverError> {
    let mut xs = Vec::with_capacity(ws.len() + 1);
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::DivergedRollout { step: 0 });
    }
    xs.push(x0.clone());
    for (j, w) in ws.iter().enumerate() {
        let next = model.step(&xs[j], &inputs[j], w)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::DivergedRollout { step: j + 1 });
        }
        xs.push(next);
    }
    Ok(xs)
}

fn max_violation(model: &SystemModel, xs: &[Vector]) -> f64 {
    xs.iter().map(|x| model.state_set().excess(x).amax()).fold(0.0, f64::max)
}

struct Iterate {
    x0: Vector,
    ws: Vec<Vector>,
    xs: Vec<Vector>,
    objective: f64,
    penalty: f64,
}

impl Iterate {
    fn total(&self) -> f64 {
        self.objective + self.penalty
    }
}

fn evaluate(problem: &HorizonProblem<'_>, x0: Vector, ws: Vec<Vector>) -> Result<Iterate, SolverError> {
    let xs = rollout(problem.model, &x0, problem.inputs, &ws)?;
    let stack = ResidualStack::build(problem, &xs, &ws)?;
    let objective = stack.objective();
    let penalty = stack.penalty();
    if !(objective + penalty).is_finite() {
        return Err(SolverError::DivergedRollout { step: ws.len() });
    }
    Ok(Iterate { x0, ws, xs, objective, penalty })
}

fn finish(problem: &HorizonProblem<'_>, it: Iterate, mut stats: SolverStats) -> HorizonSolution {
    stats.max_violation = max_violation(problem.model, &it.xs);
    HorizonSolution {
        start: problem.start,
        xs: it.xs,
        ws: it.ws,
        cost: it.objective,
        penalty: it.penalty,
        stats,
    }
}

fn gradient_parts(lin: &residuals::WindowLinearization) -> (Vector, Vec<Vector>, f64) {
    let (gx, gw) = lin.gradient();
    let sq = gx.norm_squared() + gw.iter().map(|g| g.norm_squared()).sum::<f64>();
    (gx, gw, 2.0 * sq.sqrt())
}

fn gradient_norm_at(problem: &HorizonProblem<'_>, it: &Iterate) -> Option<f64> {
    let lin = residuals::linearize(problem, &it.xs, &it.ws).ok()?;
    Some(gradient_parts(&lin).2)
}

fn compute_step(
    problem: &HorizonProblem<'_>,
    lin: &residuals::WindowLinearization,
    lambda: f64,
) -> Option<(Vector, Vec<Vector>)> {
    if problem.use_structured() {
        structured::step(lin, lambda).ok()
    } else {
        dense::step(lin, lambda)
    }
}

/// Damping beyond which a failing step counts as stalled.
const LAMBDA_CEILING: f64 = 1e16;

/// Solves the window problem from `warm_start`, or from the prior mean (the
/// model's nominal state without a prior) and zero disturbances.
pub fn solve_horizon(problem: &HorizonProblem<'_>, warm_start: Option<&WarmStart>) -> Result<HorizonSolution, SolverError> {
    problem.validate()?;
    let dims = problem.model.dims();
    let n_h = problem.horizon();
    let (x0, ws) = match warm_start {
        Some(w) => {
            if w.x0.len() != dims.n || w.ws.len() != n_h || w.ws.iter().any(|v| v.len() != dims.q) {
                return Err(SolverError::InvalidProblem("warm start does not match the window".into()));
            }
            (w.x0.clone(), w.ws.clone())
        }
        None => {
            let x0 = problem.prior.as_ref().map_or_else(|| problem.model.nominal_state().clone(), |p| p.mean.clone());
            (x0, vec![Vector::zeros(dims.q); n_h])
        }
    };
    let opts = &problem.options;
    let mut it = evaluate(problem, x0, ws)?;
    let mut trace = Vec::new();
    let mut lambda: Option<f64> = None;
    let mut iterations = 0;
    loop {
        let lin = residuals::linearize(problem, &it.xs, &it.ws)?;
        let (gx, gw, grad_norm) = gradient_parts(&lin);
        let f = it.total();
        let stats = move |termination| SolverStats {
            iterations,
            grad_norm,
            termination,
            max_violation: 0.0,
            trace: Vec::new(),
        };
        if grad_norm <= opts.grad_tol * (1.0 + f) {
            let mut s = stats(Termination::GradientTolerance);
            s.trace = trace;
            return Ok(finish(problem, it, s));
        }
        if iterations >= opts.max_iters {
            let mut s = stats(Termination::MaxIterations);
            s.trace = trace;
            return Ok(finish(problem, it, s));
        }
        let scale = lin.mean_hessian_diagonal().max(f64::MIN_POSITIVE);
        let lam = lambda.get_or_insert_with(|| opts.lm_lambda0.unwrap_or(1e-3 * scale));
        iterations += 1;
        loop {
            let accepted = match compute_step(problem, &lin, *lam) {
                None => None,
                Some((dx0, dw)) => {
                    let step_sq = dx0.norm_squared() + dw.iter().map(|d| d.norm_squared()).sum::<f64>();
                    let g_dot = gx.dot(&dx0) + gw.iter().zip(&dw).map(|(g, d)| g.dot(d)).sum::<f64>();
                    let predicted = -g_dot + *lam * step_sq;
                    // below this the cost cannot resolve progress, so the
                    // gradient norm decides instead
                    let floor = 8.0 * f64::EPSILON * (1.0 + f);
                    let x0 = &it.x0 + &dx0;
                    let ws: Vec<Vector> = it.ws.iter().zip(&dw).map(|(w, d)| w + d).collect();
                    let cand = evaluate(problem, x0, ws).ok();
                    let in_floor = predicted <= floor || cand.as_ref().is_some_and(|c| c.total() - f <= floor);
                    match cand {
                        Some(c) if c.total() < f && predicted > floor => Some(c),
                        Some(c) if in_floor && gradient_norm_at(problem, &c).is_some_and(|g| g <= 0.5 * grad_norm) => Some(c),
                        _ if predicted <= floor => {
                            let mut s = stats(Termination::NoFurtherDecrease);
                            s.trace = trace;
                            return Ok(finish(problem, it, s));
                        }
                        _ => None,
                    }
                }
            };
            if opts.trace {
                trace.push(TraceEntry {
                    iteration: iterations,
                    cost: accepted.as_ref().map_or(f, Iterate::total),
                    grad_norm,
                    lambda: *lam,
                    accepted: accepted.is_some(),
                });
            }
            match accepted {
                Some(cand) => {
                    it = cand;
                    *lam *= 0.5;
                    break;
                }
                None => {
                    *lam *= 10.0;
                    if *lam > LAMBDA_CEILING * scale.max(1.0) {
                        let best = finish(problem, it, stats(Termination::MaxIterations));
                        return Err(SolverError::Stalled { iterations, grad_norm, best: Box::new(best) });
                    }
                }
            }
        }
    }
}

/// True when `solve_linear_horizon` applies: linear dynamics with additive
/// disturbances and no bounded constraint set.
pub fn supports_exact_solve(model: &SystemModel) -> bool {
    model.linear().is_some()
        && model.additive_disturbance()
        && !model.state_set().is_bounded()
        && !model.disturbance_set().is_bounded()
        && !model.noise_set().is_bounded()
}

/// Exact path when the model allows it, otherwise Levenberg-Marquardt from
/// `warm_start`.
pub fn solve_auto(problem: &HorizonProblem<'_>, warm_start: Option<&WarmStart>) -> Result<HorizonSolution, SolverError> {
    if supports_exact_solve(problem.model) {
        // rank-deficient windows (too few outputs, no prior) have no unique
        // minimizer; the damped iteration still returns one
        match solve_linear_horizon(problem) {
            Err(SolverError::Singular { .. }) => solve_horizon(problem, warm_start),
            r => r,
        }
    } else {
        solve_horizon(problem, warm_start)
    }
}

/// Exact minimizer for linear models with unbounded constraint sets: one
/// Newton step on the block-tridiagonal normal equations.
pub fn solve_linear_horizon(problem: &HorizonProblem<'_>) -> Result<HorizonSolution, SolverError> {
    problem.validate()?;
    let model = problem.model;
    if !supports_exact_solve(model) {
        return Err(SolverError::UnsupportedModel(model.id().to_string()));
    }
    let dims = model.dims();
    let n_h = problem.horizon();
    let zero = evaluate(problem, Vector::zeros(dims.n), vec![Vector::zeros(dims.q); n_h])?;
    let lin = residuals::linearize(problem, &zero.xs, &zero.ws)?;
    let (h, g) = structured::assemble(&lin, 0.0);
    let rhs: Vec<Vector> = g.iter().map(|v| -v).collect();
    let dx = h.solve(&rhs).map_err(|e| SolverError::Singular { block: e.block })?;
    let ws = (0..n_h).map(|j| &dx[j + 1] - &lin.stages[j].a * &dx[j]).collect();
    let it = evaluate(problem, dx[0].clone(), ws)?;
    let lin = residuals::linearize(problem, &it.xs, &it.ws)?;
    let (_, _, grad_norm) = gradient_parts(&lin);
    let stats = SolverStats {
        iterations: 1,
        grad_norm,
        termination: Termination::Exact,
        max_violation: 0.0,
        trace: Vec::new(),
    };
    Ok(finish(problem, it, stats))
}
