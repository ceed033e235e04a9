//! Discrete-time system models `x+ = f(x, u, w)`, `y = h(x, u) + v` with box
//! constraint sets, derivative providers and a string-addressable registry.

mod cstr;
mod lti;
mod quadrotor;
mod reactor;
mod scalar;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ModelError;
use crate::linalg::{Matrix, Vector};

pub use cstr::{cstr, cstr_steady_state, CstrParams, CSTR_STEADY_INPUT, CSTR_STEADY_STATE};
pub use lti::make_random_lti;
pub use quadrotor::{euler_rate_map, hover_speed, quadrotor, rotation, QuadrotorParams};
pub use reactor::{batch_reactor, ReactorParams};
pub use scalar::scalar_integrator;

/// State, input, disturbance and output dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub p: usize,
}

/// Jacobians of the step and output maps at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    /// ∂f/∂x, n×n
    pub fx: Matrix,
    /// ∂f/∂w, n×q
    pub fw: Matrix,
    /// ∂h/∂x, p×n
    pub hx: Matrix,
}

/// The model equations. Implementations must be pure and reentrant.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn step(&self, x: &Vector, u: &Vector, w: &Vector) -> Result<Vector, ModelError>;

    fn output(&self, x: &Vector, u: &Vector) -> Result<Vector, ModelError>;

    /// Analytic Jacobians, if the model has them. `None` selects finite differences.
    fn jacobians(
        &self,
        _x: &Vector,
        _u: &Vector,
        _w: &Vector,
    ) -> Option<Result<Jacobians, ModelError>> {
        None
    }
}

/// A box `[lower, upper]` per component, or the whole space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxSet {
    All,
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl BoxSet {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));
        BoxSet::Box { lower, upper }
    }

    pub fn symmetric(half_widths: &[f64]) -> Self {
        BoxSet::new_box(half_widths.iter().map(|b| -b).collect(), half_widths.to_vec())
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, BoxSet::Box { .. })
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        self.first_violation(x, tol).is_none()
    }

    /// First component lying outside the box by more than `tol`.
    pub fn first_violation(&self, x: &Vector, tol: f64) -> Option<usize> {
        match self {
            BoxSet::All => None,
            BoxSet::Box { lower, upper } => {
                (0..x.len()).find(|&i| x[i] < lower[i] - tol || x[i] > upper[i] + tol)
            }
        }
    }

    /// Signed excess per component: positive above the upper bound, negative
    /// below the lower bound, zero inside.
    pub fn excess(&self, x: &Vector) -> Vector {
        match self {
            BoxSet::All => Vector::zeros(x.len()),
            BoxSet::Box { lower, upper } => Vector::from_fn(x.len(), |i, _| {
                if x[i] > upper[i] {
                    x[i] - upper[i]
                } else if x[i] < lower[i] {
                    x[i] - lower[i]
                } else {
                    0.0
                }
            }),
        }
    }

    pub fn project(&self, x: &Vector) -> Vector {
        match self {
            BoxSet::All => x.clone(),
            BoxSet::Box { lower, upper } => {
                Vector::from_fn(x.len(), |i, _| x[i].clamp(lower[i], upper[i]))
            }
        }
    }
}

/// `x+ = A x + B u + w`, `y = C x` (measurement noise added outside).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStructure {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    Euler,
    Rk4,
}

/// Fixed-step discretization of a continuous-time right-hand side.
pub fn discretize<F>(
    rhs: &F,
    method: Discretization,
    dt: f64,
    x: &Vector,
    u: &Vector,
) -> Result<Vector, ModelError>
where
    F: Fn(&Vector, &Vector) -> Result<Vector, ModelError> + ?Sized,
{
    match method {
        Discretization::Euler => Ok(x + rhs(x, u)? * dt),
        Discretization::Rk4 => {
            let k1 = rhs(x, u)?;
            let k2 = rhs(&(x + &k1 * (dt / 2.0)), u)?;
            let k3 = rhs(&(x + &k2 * (dt / 2.0)), u)?;
            let k4 = rhs(&(x + &k3 * dt), u)?;
            Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
        }
    }
}

/// An immutable, shareable system model.
#[derive(Clone)]
pub struct SystemModel {
    id: String,
    dims: Dims,
    dynamics: Arc<dyn Dynamics>,
    additive_disturbance: bool,
    state_set: BoxSet,
    disturbance_set: BoxSet,
    noise_set: BoxSet,
    linear: Option<LinearStructure>,
    nominal_state: Vector,
    parameters: Value,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("id", &self.id)
            .field("dims", &self.dims)
            .field("additive_disturbance", &self.additive_disturbance)
            .finish_non_exhaustive()
    }
}

pub struct SystemModelBuilder {
    model: SystemModel,
}

impl SystemModelBuilder {
    pub fn state_set(mut self, set: BoxSet) -> Self {
        self.model.state_set = set;
        self
    }

    pub fn disturbance_set(mut self, set: BoxSet) -> Self {
        self.model.disturbance_set = set;
        self
    }

    pub fn noise_set(mut self, set: BoxSet) -> Self {
        self.model.noise_set = set;
        self
    }

    pub fn additive_disturbance(mut self, additive: bool) -> Self {
        self.model.additive_disturbance = additive;
        self
    }

    pub fn linear(mut self, linear: LinearStructure) -> Self {
        self.model.linear = Some(linear);
        self
    }

    pub fn nominal_state(mut self, x: Vector) -> Self {
        self.model.nominal_state = x;
        self
    }

    pub fn parameters(mut self, parameters: Value) -> Self {
        self.model.parameters = parameters;
        self
    }

    pub fn build(self) -> SystemModel {
        let m = self.model;
        if m.additive_disturbance {
            assert_eq!(m.dims.q, m.dims.n, "additive disturbance requires q = n");
        }
        assert_eq!(m.nominal_state.len(), m.dims.n);
        m
    }
}

impl SystemModel {
    pub fn builder(id: impl Into<String>, dims: Dims, dynamics: Arc<dyn Dynamics>) -> SystemModelBuilder {
        SystemModelBuilder {
            model: SystemModel {
                id: id.into(),
                dims,
                dynamics,
                additive_disturbance: false,
                state_set: BoxSet::All,
                disturbance_set: BoxSet::All,
                noise_set: BoxSet::All,
                linear: None,
                nominal_state: Vector::zeros(dims.n),
                parameters: Value::Null,
            },
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn additive_disturbance(&self) -> bool {
        self.additive_disturbance
    }

    pub fn state_set(&self) -> &BoxSet {
        &self.state_set
    }

    pub fn disturbance_set(&self) -> &BoxSet {
        &self.disturbance_set
    }

    pub fn noise_set(&self) -> &BoxSet {
        &self.noise_set
    }

    pub fn linear(&self) -> Option<&LinearStructure> {
        self.linear.as_ref()
    }

    pub fn nominal_state(&self) -> &Vector {
        &self.nominal_state
    }

    pub fn parameters(&self) -> &Value {
        &self.parameters
    }

    fn check_len(&self, what: &str, v: &Vector, expected: usize) -> Result<(), ModelError> {
        if v.len() != expected {
            return Err(ModelError::Dimension(format!(
                "{what} has length {} but model `{}` expects {expected}",
                v.len(),
                self.id
            )));
        }
        Ok(())
    }

    pub fn step(&self, x: &Vector, u: &Vector, w: &Vector) -> Result<Vector, ModelError> {
        self.check_len("state", x, self.dims.n)?;
        self.check_len("input", u, self.dims.m)?;
        self.check_len("disturbance", w, self.dims.q)?;
        self.dynamics.step(x, u, w)
    }

    pub fn output(&self, x: &Vector, u: &Vector) -> Result<Vector, ModelError> {
        self.check_len("state", x, self.dims.n)?;
        self.check_len("input", u, self.dims.m)?;
        self.dynamics.output(x, u)
    }

    /// Disturbance-free step `f(x, u, 0)`; equals `f_a(x, u)` for additive models.
    pub fn drift(&self, x: &Vector, u: &Vector) -> Result<Vector, ModelError> {
        self.step(x, u, &Vector::zeros(self.dims.q))
    }

    /// Analytic Jacobians where available, forward differences otherwise.
    pub fn jacobians(&self, x: &Vector, u: &Vector, w: &Vector) -> Result<Jacobians, ModelError> {
        match self.dynamics.jacobians(x, u, w) {
            Some(j) => j,
            None => finite_difference_jacobians(self, x, u, w),
        }
    }

    /// JSON model card: dimensions, parameters and constraint sets.
    pub fn card(&self) -> Value {
        json!({
            "id": self.id,
            "dims": self.dims,
            "additive_disturbance": self.additive_disturbance,
            "linear": self.linear.is_some(),
            "state_set": self.state_set,
            "disturbance_set": self.disturbance_set,
            "noise_set": self.noise_set,
            "nominal_state": self.nominal_state.as_slice(),
            "parameters": self.parameters,
        })
    }
}

fn fd_step(v: f64) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + v.abs())
}

/// Forward-difference Jacobians with step `sqrt(eps) * (1 + |v_i|)`.
pub fn finite_difference_jacobians(
    model: &SystemModel,
    x: &Vector,
    u: &Vector,
    w: &Vector,
) -> Result<Jacobians, ModelError> {
    let Dims { n, q, p, .. } = model.dims();
    let f0 = model.step(x, u, w)?;
    let h0 = model.output(x, u)?;
    let mut fx = Matrix::zeros(n, n);
    let mut hx = Matrix::zeros(p, n);
    for i in 0..n {
        let h = fd_step(x[i]);
        let mut xp = x.clone();
        xp[i] += h;
        let dh = xp[i] - x[i];
        fx.set_column(i, &((model.step(&xp, u, w)? - &f0) / dh));
        hx.set_column(i, &((model.output(&xp, u)? - &h0) / dh));
    }
    let fw = if model.additive_disturbance() {
        Matrix::identity(n, q)
    } else {
        let mut fw = Matrix::zeros(n, q);
        for i in 0..q {
            let h = fd_step(w[i]);
            let mut wp = w.clone();
            wp[i] += h;
            let dh = wp[i] - w[i];
            fw.set_column(i, &((model.step(x, u, &wp)? - &f0) / dh));
        }
        fw
    };
    Ok(Jacobians { fx, fw, hx })
}

/// Looks up a model by registry id: `scalar`, `reactor`, `cstr`, `quadrotor`
/// or `lti:<n>:<m>:<p>:<seed>`.
pub fn model_by_id(id: &str) -> Result<SystemModel, ModelError> {
    match id {
        "scalar" => Ok(scalar_integrator()),
        "reactor" => Ok(batch_reactor()),
        "cstr" => Ok(cstr()),
        "quadrotor" => Ok(quadrotor()),
        _ if id.starts_with("lti:") => {
            let parts: Vec<&str> = id.split(':').collect();
            if parts.len() != 5 {
                return Err(ModelError::UnknownModel(id.to_string()));
            }
            let parse = |s: &str| s.parse::<u64>().map_err(|_| ModelError::UnknownModel(id.to_string()));
            let n = parse(parts[1])? as usize;
            let m = parse(parts[2])? as usize;
            let p = parse(parts[3])? as usize;
            let seed = parse(parts[4])?;
            if n == 0 || m == 0 || p == 0 {
                return Err(ModelError::InvalidParameter(format!(
                    "lti dimensions must be positive in `{id}`"
                )));
            }
            Ok(make_random_lti(n, m, p, seed))
        }
        _ => Err(ModelError::UnknownModel(id.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_models() -> Vec<SystemModel> {
        vec![
            scalar_integrator(),
            batch_reactor(),
            make_random_lti(4, 2, 3, 11),
            cstr(),
            quadrotor(),
        ]
    }

    #[test]
    fn registry_resolves_every_id() {
        for id in ["scalar", "reactor", "cstr", "quadrotor", "lti:5:2:3:9"] {
            assert_eq!(model_by_id(id).unwrap().id(), id);
        }
        assert!(matches!(model_by_id("pendulum"), Err(ModelError::UnknownModel(_))));
        assert!(model_by_id("lti:0:1:1:1").is_err());
        assert!(model_by_id("lti:3:1").is_err());
    }

    #[test]
    fn cards_carry_dimensions() {
        for model in all_models() {
            let card = model.card();
            assert_eq!(card["dims"]["n"], model.dims().n);
            assert_eq!(card["id"], model.id());
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = batch_reactor();
        let err = m.step(&Vector::zeros(3), &Vector::zeros(2), &Vector::zeros(2));
        assert!(matches!(err, Err(ModelError::Dimension(_))));
    }

    #[test]
    fn rk4_integrates_linear_decay() {
        let rhs = |x: &Vector, _u: &Vector| Ok::<_, ModelError>(-x);
        let x = Vector::from_element(1, 1.0);
        let u = Vector::zeros(0);
        let next = discretize(&rhs, Discretization::Rk4, 0.1, &x, &u).unwrap();
        assert!((next[0] - (-0.1f64).exp()).abs() < 1e-7);
        let euler = discretize(&rhs, Discretization::Euler, 0.1, &x, &u).unwrap();
        assert!((euler[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn box_projection_is_a_fixed_point_of_membership() {
        let set = BoxSet::new_box(vec![0.5, 200.0], vec![1.5, 400.0]);
        let x = Vector::from_vec(vec![2.0, 100.0]);
        let p = set.project(&x);
        assert!(set.contains(&p, 0.0));
        assert_eq!(set.project(&p), p);
        assert_eq!(set.first_violation(&x, 0.0), Some(0));
        assert_eq!(set.excess(&x), Vector::from_vec(vec![0.5, -100.0]));
    }

    proptest! {
        #[test]
        fn additive_models_separate_the_disturbance(
            seed in 0u64..1000,
            scale in 0.01f64..0.5,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for model in all_models() {
                let Dims { n, m, q, .. } = model.dims();
                let mut x = model.nominal_state().clone();
                for i in 0..n {
                    let size = if x[i] == 0.0 { 1.0 } else { 0.2 * x[i].abs() };
                    x[i] += scale * rng.random_range(-1.0..1.0) * size;
                }
                let u = match model.id() {
                    "cstr" => Vector::from_column_slice(&CSTR_STEADY_INPUT),
                    "quadrotor" => Vector::from_element(4, hover_speed(&QuadrotorParams::default())),
                    _ => Vector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)),
                };
                let w = Vector::from_fn(q, |_, _| rng.random_range(-1.0..1.0));
                let with_w = model.step(&x, &u, &w).unwrap();
                let without = model.step(&x, &u, &Vector::zeros(q)).unwrap();
                prop_assert!(model.additive_disturbance());
                // f(x,u,w) is evaluated as f_a(x,u) + w in every model
                prop_assert_eq!(with_w, without + w);
            }
        }

        #[test]
        fn projected_points_are_members(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let set = BoxSet::new_box(vec![-1.0, 0.0], vec![1.0, 2.0]);
            let p = set.project(&Vector::from_vec(vec![a, b]));
            prop_assert!(set.contains(&p, 0.0));
            prop_assert_eq!(set.project(&p), p);
        }
    }
}
