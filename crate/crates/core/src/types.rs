//! Shared data model: data batches, horizon solutions, estimate sequences,
//! cost weights and detectability certificates.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::{is_spd, lambda_min, sqrt_factor, Matrix, Vector};
use crate::models::SystemModel;

/// Ground-truth sequences of a simulated batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub states: Vec<Vector>,
    /// One fewer than `states`.
    pub disturbances: Vec<Vector>,
    pub noise: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchMeta {
    pub model: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub generation: Value,
}

/// Time-indexed inputs and outputs, with ground truth when simulated.
/// Row `k` holds data for the absolute time `t0 + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    pub t0: i64,
    pub inputs: Vec<Vector>,
    pub outputs: Vec<Vector>,
    pub truth: Option<Truth>,
    pub meta: BatchMeta,
}

impl DataBatch {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Last time index covered.
    pub fn t_end(&self) -> i64 {
        self.t0 + self.len() as i64 - 1
    }

    pub fn index(&self, t: i64) -> Result<usize> {
        if t < self.t0 || t > self.t_end() {
            return Err(Error::OutOfRange(t));
        }
        Ok((t - self.t0) as usize)
    }

    pub fn truth(&self) -> Result<&Truth> {
        self.truth.as_ref().ok_or(Error::MissingTruth)
    }

    pub fn true_state(&self, t: i64) -> Result<&Vector> {
        let k = self.index(t)?;
        Ok(&self.truth()?.states[k])
    }

    /// Input and output slices for the closed window `[a, b]`.
    pub fn window(&self, a: i64, b: i64) -> Result<(&[Vector], &[Vector])> {
        let i = self.index(a)?;
        let j = self.index(b)?;
        if j < i {
            return Err(Error::OutOfRange(b));
        }
        Ok((&self.inputs[i..=j], &self.outputs[i..=j]))
    }

    /// Sub-batch on `[a, b]` with absolute indices preserved.
    pub fn slice(&self, a: i64, b: i64) -> Result<DataBatch> {
        let i = self.index(a)?;
        let j = self.index(b)?;
        let truth = self.truth.as_ref().map(|tr| Truth {
            states: tr.states[i..=j].to_vec(),
            disturbances: tr.disturbances[i..j].to_vec(),
            noise: tr.noise[i..=j].to_vec(),
        });
        Ok(DataBatch {
            t0: a,
            inputs: self.inputs[i..=j].to_vec(),
            outputs: self.outputs[i..=j].to_vec(),
            truth,
            meta: self.meta.clone(),
        })
    }

    /// Same batch with the ground truth removed.
    pub fn without_truth(&self) -> DataBatch {
        DataBatch { truth: None, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    Dimension { detail: String },
    Constraint { t: i64, set: String, component: usize, value: f64 },
    NonFinite { t: i64, field: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Tolerance for truth tuples sitting on a constraint boundary.
const MEMBERSHIP_TOL: f64 = 1e-9;

/// Checks dimensions, finiteness and constraint-set membership of a batch.
pub fn validate_batch(batch: &DataBatch, model: &SystemModel) -> ValidationReport {
    let dims = model.dims();
    let mut findings = Vec::new();
    let mut dim = |detail: String| findings.push(Finding::Dimension { detail });
    if batch.inputs.len() != batch.outputs.len() {
        dim(format!("{} inputs but {} outputs", batch.inputs.len(), batch.outputs.len()));
    }
    let check_seq = |seq: &[Vector], width: usize, name: &str, findings: &mut Vec<Finding>| {
        for (k, v) in seq.iter().enumerate() {
            let t = batch.t0 + k as i64;
            if v.len() != width {
                findings.push(Finding::Dimension {
                    detail: format!("{name} at t = {t} has length {} (expected {width})", v.len()),
                });
            } else if v.iter().any(|x| !x.is_finite()) {
                findings.push(Finding::NonFinite { t, field: name.to_string() });
            }
        }
    };
    check_seq(&batch.inputs, dims.m, "input", &mut findings);
    check_seq(&batch.outputs, dims.p, "output", &mut findings);
    if let Some(truth) = &batch.truth {
        let n_out = batch.outputs.len();
        if truth.states.len() != n_out {
            findings.push(Finding::Dimension {
                detail: format!("{} true states for {n_out} outputs", truth.states.len()),
            });
        }
        if truth.disturbances.len() + 1 != n_out {
            findings.push(Finding::Dimension {
                detail: format!("{} true disturbances for {n_out} outputs", truth.disturbances.len()),
            });
        }
        if truth.noise.len() != n_out {
            findings.push(Finding::Dimension {
                detail: format!("{} noise samples for {n_out} outputs", truth.noise.len()),
            });
        }
        check_seq(&truth.states, dims.n, "state", &mut findings);
        check_seq(&truth.disturbances, dims.q, "disturbance", &mut findings);
        check_seq(&truth.noise, dims.p, "noise", &mut findings);
        let sets = [
            ("X", model.state_set(), &truth.states, dims.n),
            ("W", model.disturbance_set(), &truth.disturbances, dims.q),
            ("V", model.noise_set(), &truth.noise, dims.p),
        ];
        for (name, set, seq, width) in sets {
            for (k, v) in seq.iter().enumerate() {
                if v.len() != width {
                    continue;
                }
                if let Some(c) = set.first_violation(v, MEMBERSHIP_TOL) {
                    findings.push(Finding::Constraint {
                        t: batch.t0 + k as i64,
                        set: name.to_string(),
                        component: c,
                        value: v[c],
                    });
                }
            }
        }
    }
    ValidationReport { findings }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    /// The predicted decrease fell below rounding level.
    NoFurtherDecrease,
    MaxIterations,
    /// Single exact Newton step on a quadratic problem.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub lambda: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub grad_norm: f64,
    pub termination: Termination,
    /// Largest state-box violation of the returned iterate.
    pub max_violation: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEntry>,
}

/// Optimal `(x̂, ŵ)` of one finite-horizon problem on `[start, start + N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    pub start: i64,
    pub xs: Vec<Vector>,
    pub ws: Vec<Vector>,
    /// Objective value without penalty terms.
    pub cost: f64,
    pub penalty: f64,
    pub stats: SolverStats,
}

impl HorizonSolution {
    pub fn horizon(&self) -> usize {
        self.ws.len()
    }

    pub fn end(&self) -> i64 {
        self.start + self.horizon() as i64
    }

    /// State estimate for absolute time `t`, if inside the window.
    pub fn state_at(&self, t: i64) -> Option<&Vector> {
        if t < self.start || t > self.end() {
            return None;
        }
        self.xs.get((t - self.start) as usize)
    }

    pub fn last_state(&self) -> &Vector {
        self.xs.last().expect("window has at least one state")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Fie,
    Mhe,
    DelayedMhe,
    MhePrior,
    Ihe,
    Ae,
    Kf,
    Fis,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Fie => "fie",
            EstimatorKind::Mhe => "mhe",
            EstimatorKind::DelayedMhe => "delayed_mhe",
            EstimatorKind::MhePrior => "mhe_prior",
            EstimatorKind::Ihe => "ihe",
            EstimatorKind::Ae => "ae",
            EstimatorKind::Kf => "kf",
            EstimatorKind::Fis => "fis",
        }
    }
}

/// Per-time state estimates of one estimator run. `states[k]` is the
/// estimate for absolute time `start + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSequence {
    pub kind: EstimatorKind,
    pub delay: usize,
    pub start: i64,
    pub states: Vec<Vector>,
    /// Disturbance estimates when the estimator produces a consistent pair.
    pub disturbances: Option<Vec<Vector>>,
    pub config_digest: String,
    pub label: String,
}

impl EstimateSequence {
    pub fn end(&self) -> i64 {
        self.start + self.states.len() as i64 - 1
    }

    pub fn get(&self, t: i64) -> Option<&Vector> {
        if t < self.start {
            return None;
        }
        self.states.get((t - self.start) as usize)
    }

    pub fn covers(&self, a: i64, b: i64) -> bool {
        a >= self.start && b <= self.end()
    }
}

/// Quadratic weights `|w|_Q^2 + |y - h|_R^2` per stage and `|y - h|_G^2` at
/// the end of a window. Square-root factors are kept for residual stacking.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q: Matrix,
    r: Matrix,
    g: Matrix,
    sq: Matrix,
    sr: Matrix,
    sg: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostRecord {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
}

pub(crate) fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidConfig("ragged matrix rows".into()));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn checked_factor(m: &Matrix, name: &str) -> Result<Matrix> {
    sqrt_factor(m).ok_or_else(|| Error::NotPositiveDefinite(name.to_string()))
}

impl CostSpec {
    pub fn new(q: Matrix, r: Matrix, g: Matrix) -> Result<Self> {
        let sq = checked_factor(&q, "Q")?;
        let sr = checked_factor(&r, "R")?;
        let sg = checked_factor(&g, "G")?;
        if r.nrows() != g.nrows() {
            return Err(Error::InvalidConfig("R and G must have the same size".into()));
        }
        Ok(Self { q, r, g, sq, sr, sg })
    }

    pub fn diagonal(q: &[f64], r: &[f64], g: &[f64]) -> Result<Self> {
        let d = |v: &[f64]| Matrix::from_diagonal(&Vector::from_column_slice(v));
        Self::new(d(q), d(r), d(g))
    }

    pub fn identity(q: usize, p: usize) -> Self {
        Self::new(Matrix::identity(q, q), Matrix::identity(p, p), Matrix::identity(p, p))
            .expect("identity weights")
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn sqrt_q(&self) -> &Matrix {
        &self.sq
    }

    pub fn sqrt_r(&self) -> &Matrix {
        &self.sr
    }

    pub fn sqrt_g(&self) -> &Matrix {
        &self.sg
    }

    /// `|w|_Q^2 + |e|_R^2`
    pub fn stage(&self, w: &Vector, e: &Vector) -> f64 {
        w.dot(&(&self.q * w)) + e.dot(&(&self.r * e))
    }

    /// `|e|_G^2`
    pub fn terminal(&self, e: &Vector) -> f64 {
        e.dot(&(&self.g * e))
    }

    pub fn record(&self) -> CostRecord {
        CostRecord { q: matrix_rows(&self.q), r: matrix_rows(&self.r), g: matrix_rows(&self.g) }
    }

    pub fn from_record(rec: &CostRecord) -> Result<Self> {
        Self::new(matrix_from_rows(&rec.q)?, matrix_from_rows(&rec.r)?, matrix_from_rows(&rec.g)?)
    }
}

/// Exponential i-IOSS certificate: a function `U` sandwiched between
/// `|x1 - x2|^2_{P1}` and `|x1 - x2|^2_{P2}`, decreasing by `eta` per step up to
/// the supply `|w1 - w2|^2_Q + |h(x1) - h(x2)|^2_R`.
#[derive(Debug, Clone, PartialEq)]
pub struct IossCertificate {
    pub p1: Matrix,
    pub p2: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub eta: f64,
}

impl IossCertificate {
    pub fn new(p1: Matrix, p2: Matrix, q: Matrix, r: Matrix, eta: f64) -> Result<Self> {
        let cert = Self { p1, p2, q, r, eta };
        cert.validate()?;
        Ok(cert)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::InvalidCertificate(format!("eta = {} is outside [0, 1)", self.eta)));
        }
        for (m, name) in [(&self.p1, "P1"), (&self.p2, "P2"), (&self.q, "Q"), (&self.r, "R")] {
            if !is_spd(m) {
                return Err(Error::InvalidCertificate(format!("{name} is not positive definite")));
            }
        }
        if self.p1.shape() != self.p2.shape() {
            return Err(Error::InvalidCertificate("P1 and P2 differ in size".into()));
        }
        let gap = &self.p2 - &self.p1;
        if lambda_min(&gap) < -1e-12 * self.p2.amax().max(1.0) {
            return Err(Error::InvalidCertificate("P1 is not below P2".into()));
        }
        Ok(())
    }
}
