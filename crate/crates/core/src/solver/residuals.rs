//! Residual decomposition of the window objective and its per-stage
//! linearization.

use crate::error::SolverError;
use crate::linalg::{Matrix, Vector};

use super::HorizonProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Prior,
    Disturbance,
    Fit,
    Terminal,
    StatePenalty,
    DisturbancePenalty,
    NoisePenalty,
}

impl BlockKind {
    pub fn is_penalty(self) -> bool {
        matches!(
            self,
            BlockKind::StatePenalty | BlockKind::DisturbancePenalty | BlockKind::NoisePenalty
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub kind: BlockKind,
    /// Window-relative stage index.
    pub index: usize,
    pub values: Vector,
}

/// Ordered residual blocks whose squared norm is the window objective plus
/// penalty terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStack {
    pub blocks: Vec<ResidualBlock>,
}

impl ResidualStack {
    pub fn build(problem: &HorizonProblem<'_>, xs: &[Vector], ws: &[Vector]) -> Result<Self, SolverError> {
        let model = problem.model;
        let n_h = ws.len();
        let mut blocks = Vec::with_capacity(3 * n_h + 3);
        let mut push = |kind, index, values| blocks.push(ResidualBlock { kind, index, values });
        if let Some(prior) = &problem.prior {
            push(BlockKind::Prior, 0, prior.sqrt_weight() * (&xs[0] - &prior.mean));
        }
        let sqrt_mu = problem.options.penalty_mu.sqrt();
        for (j, w) in ws.iter().enumerate() {
            push(BlockKind::Disturbance, j, problem.cost.sqrt_q() * w);
            if model.disturbance_set().is_bounded() {
                push(BlockKind::DisturbancePenalty, j, model.disturbance_set().excess(w) * sqrt_mu);
            }
        }
        for (j, x) in xs.iter().enumerate() {
            let e = &problem.outputs[j] - model.output(x, &problem.inputs[j])?;
            if j < n_h {
                push(BlockKind::Fit, j, problem.cost.sqrt_r() * &e);
            } else {
                push(BlockKind::Terminal, j, problem.cost.sqrt_g() * &e);
            }
            if model.noise_set().is_bounded() {
                push(BlockKind::NoisePenalty, j, model.noise_set().excess(&e) * sqrt_mu);
            }
            if model.state_set().is_bounded() {
                push(BlockKind::StatePenalty, j, model.state_set().excess(x) * sqrt_mu);
            }
        }
        Ok(Self { blocks })
    }

    pub fn squared_norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.values.norm_squared()).sum()
    }

    /// Squared norm of the non-penalty blocks.
    pub fn objective(&self) -> f64 {
        self.blocks.iter().filter(|b| !b.kind.is_penalty()).map(|b| b.values.norm_squared()).sum()
    }

    pub fn penalty(&self) -> f64 {
        self.blocks.iter().filter(|b| b.kind.is_penalty()).map(|b| b.values.norm_squared()).sum()
    }
}

/// Gauss-Newton data of one stage: residuals and Jacobians with respect to
/// the stage state and disturbance, and the dynamics Jacobians.
#[derive(Debug, Clone)]
pub struct StageLinearization {
    /// Residuals depending on `x_j` only (fit or terminal, noise and state penalties).
    pub rx: Vector,
    pub jx: Matrix,
    /// Residuals depending on `w_j` only; empty at the last stage.
    pub rw: Vector,
    pub jw: Matrix,
    /// `∂f/∂x`, `∂f/∂w` at stage `j`; empty at the last stage.
    pub a: Matrix,
    pub e: Matrix,
}

#[derive(Debug, Clone)]
pub struct WindowLinearization {
    pub prior: Option<(Vector, Matrix)>,
    pub stages: Vec<StageLinearization>,
}

fn active_rows(excess: &Vector, jac: Matrix, sqrt_mu: f64) -> Matrix {
    let mut j = jac * sqrt_mu;
    for i in 0..excess.len() {
        if excess[i] == 0.0 {
            j.row_mut(i).fill(0.0);
        }
    }
    j
}

fn stack_rows(parts: &[(Vector, Matrix)], cols: usize) -> (Vector, Matrix) {
    let rows: usize = parts.iter().map(|(r, _)| r.len()).sum();
    let mut r = Vector::zeros(rows);
    let mut j = Matrix::zeros(rows, cols);
    let mut at = 0;
    for (ri, ji) in parts {
        r.rows_mut(at, ri.len()).copy_from(ri);
        j.view_mut((at, 0), (ri.len(), cols)).copy_from(ji);
        at += ri.len();
    }
    (r, j)
}

pub fn linearize(
    problem: &HorizonProblem<'_>,
    xs: &[Vector],
    ws: &[Vector],
) -> Result<WindowLinearization, SolverError> {
    let model = problem.model;
    let dims = model.dims();
    let n_h = ws.len();
    let sqrt_mu = problem.options.penalty_mu.sqrt();
    let prior = problem
        .prior
        .as_ref()
        .map(|p| (p.sqrt_weight() * (&xs[0] - &p.mean), p.sqrt_weight().clone()));
    let zero_w = Vector::zeros(dims.q);
    let mut stages = Vec::with_capacity(n_h + 1);
    for (j, x) in xs.iter().enumerate() {
        let u = &problem.inputs[j];
        let w = ws.get(j).unwrap_or(&zero_w);
        let jac = model.jacobians(x, u, w)?;
        let e = &problem.outputs[j] - model.output(x, u)?;
        let s = if j < n_h { problem.cost.sqrt_r() } else { problem.cost.sqrt_g() };
        let mut xparts = vec![(s * &e, -(s * &jac.hx))];
        if model.noise_set().is_bounded() {
            let ex = model.noise_set().excess(&e);
            xparts.push((&ex * sqrt_mu, active_rows(&ex, -&jac.hx, sqrt_mu)));
        }
        if model.state_set().is_bounded() {
            let ex = model.state_set().excess(x);
            xparts.push((&ex * sqrt_mu, active_rows(&ex, Matrix::identity(dims.n, dims.n), sqrt_mu)));
        }
        let (rx, jx) = stack_rows(&xparts, dims.n);
        let stage = if j < n_h {
            let mut wparts = vec![(problem.cost.sqrt_q() * w, problem.cost.sqrt_q().clone())];
            if model.disturbance_set().is_bounded() {
                let ex = model.disturbance_set().excess(w);
                wparts.push((&ex * sqrt_mu, active_rows(&ex, Matrix::identity(dims.q, dims.q), sqrt_mu)));
            }
            let (rw, jw) = stack_rows(&wparts, dims.q);
            StageLinearization { rx, jx, rw, jw, a: jac.fx, e: jac.fw }
        } else {
            StageLinearization {
                rx,
                jx,
                rw: Vector::zeros(0),
                jw: Matrix::zeros(0, dims.q),
                a: Matrix::zeros(0, 0),
                e: Matrix::zeros(0, 0),
            }
        };
        stages.push(stage);
    }
    Ok(WindowLinearization { prior, stages })
}

impl WindowLinearization {
    pub fn horizon(&self) -> usize {
        self.stages.len() - 1
    }

    /// Half-gradient `J^T r` with respect to `(x_0, w_0, ..., w_{N-1})`,
    /// by the adjoint recursion through the dynamics.
    pub fn gradient(&self) -> (Vector, Vec<Vector>) {
        let n_h = self.horizon();
        let mut mu = self.stages[n_h].jx.tr_mul(&self.stages[n_h].rx);
        let mut gw = vec![Vector::zeros(0); n_h];
        for j in (0..n_h).rev() {
            let st = &self.stages[j];
            gw[j] = st.jw.tr_mul(&st.rw) + st.e.tr_mul(&mu);
            mu = st.jx.tr_mul(&st.rx) + st.a.tr_mul(&mu);
        }
        if let Some((rp, lp)) = &self.prior {
            mu += lp.tr_mul(rp);
        }
        (mu, gw)
    }

    /// Mean diagonal entry of the condensed Gauss-Newton Hessian.
    pub fn mean_hessian_diagonal(&self) -> f64 {
        let n_h = self.horizon();
        let last = &self.stages[n_h];
        let mut p = last.jx.tr_mul(&last.jx);
        let mut sum = 0.0;
        let mut count = 0usize;
        for j in (0..n_h).rev() {
            let st = &self.stages[j];
            let hw = st.jw.tr_mul(&st.jw) + st.e.tr_mul(&p) * &st.e;
            sum += hw.diagonal().sum();
            count += hw.nrows();
            p = st.jx.tr_mul(&st.jx) + st.a.tr_mul(&p) * &st.a;
        }
        if let Some((_, lp)) = &self.prior {
            p += lp.tr_mul(lp);
        }
        sum += p.diagonal().sum();
        count += p.nrows();
        sum / count.max(1) as f64
    }
}
