use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use super::{discretize, BoxSet, Dims, Discretization, Dynamics, SystemModel};
use crate::error::ModelError;
use crate::linalg::Vector;

/// Steady state reported for the reactor at [`CSTR_STEADY_INPUT`].
pub const CSTR_STEADY_STATE: [f64; 3] = [0.878, 323.5, 0.659];
/// Coolant temperature and outlet flow at the steady state.
pub const CSTR_STEADY_INPUT: [f64; 2] = [300.0, 0.1];

/// Exothermic first-order reactor with cooling jacket and free liquid level.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CstrParams {
    pub f0: f64,
    pub t0: f64,
    pub c0: f64,
    pub r: f64,
    pub k0: f64,
    pub e_over_r: f64,
    pub u: f64,
    pub rho: f64,
    pub cp: f64,
    pub delta_h: f64,
    pub dt: f64,
}

impl Default for CstrParams {
    fn default() -> Self {
        Self {
            f0: 0.1,
            t0: 350.0,
            c0: 1.0,
            r: 0.219,
            k0: 7.2e10,
            e_over_r: 8750.0,
            u: 54.94,
            rho: 1000.0,
            cp: 0.239,
            delta_h: -5.0e4,
            dt: 0.25,
        }
    }
}

impl CstrParams {
    pub fn rhs(&self, x: &Vector, u: &Vector) -> Result<Vector, ModelError> {
        let (c, temp, h) = (x[0], x[1], x[2]);
        let (tc, f) = (u[0], u[1]);
        let area = PI * self.r * self.r;
        let rate = self.k0 * (-self.e_over_r / temp).exp() * c;
        let dc = self.f0 * (self.c0 - c) / (area * h) - rate;
        let dtemp = self.f0 * (self.t0 - temp) / (area * h)
            + (-self.delta_h) / (self.rho * self.cp) * rate
            + 2.0 * self.u / (self.r * self.rho * self.cp) * (tc - temp);
        let dh = (self.f0 - f) / area;
        Ok(Vector::from_vec(vec![dc, dtemp, dh]))
    }
}

#[derive(Debug)]
struct Cstr(CstrParams);

impl Dynamics for Cstr {
    fn step(&self, x: &Vector, u: &Vector, w: &Vector) -> Result<Vector, ModelError> {
        let rhs = |x: &Vector, u: &Vector| self.0.rhs(x, u);
        Ok(discretize(&rhs, Discretization::Rk4, self.0.dt, x, u)? + w)
    }

    fn output(&self, x: &Vector, _u: &Vector) -> Result<Vector, ModelError> {
        Ok(Vector::from_element(1, x[1]))
    }
}

/// Steady state of the continuous-time model at `u`, by Newton iteration on
/// the concentration and temperature balances (the level is neutral when
/// inflow equals outflow and is left at `level`).
pub fn cstr_steady_state(params: &CstrParams, u: &Vector, level: f64) -> Vector {
    let mut x = Vector::from_vec(vec![0.9, 320.0, level]);
    for _ in 0..50 {
        let f = params.rhs(&x, u).unwrap();
        let mut jac = nalgebra::Matrix2::zeros();
        for k in 0..2 {
            let h = 1e-7 * (1.0 + x[k].abs());
            let mut xp = x.clone();
            xp[k] += h;
            let fp = params.rhs(&xp, u).unwrap();
            jac[(0, k)] = (fp[0] - f[0]) / h;
            jac[(1, k)] = (fp[1] - f[1]) / h;
        }
        let step = jac.lu().solve(&nalgebra::Vector2::new(-f[0], -f[1])).unwrap();
        x[0] += step[0];
        x[1] += step[1];
        if step.amax() < 1e-13 {
            break;
        }
    }
    x
}

pub fn cstr() -> SystemModel {
    let params = CstrParams::default();
    let dims = Dims { n: 3, m: 2, q: 3, p: 1 };
    let nominal = cstr_steady_state(&params, &Vector::from_column_slice(&CSTR_STEADY_INPUT), CSTR_STEADY_STATE[2]);
    SystemModel::builder("cstr", dims, Arc::new(Cstr(params)))
        .additive_disturbance(true)
        .state_set(BoxSet::new_box(vec![0.5, 200.0, 0.5], vec![1.5, 400.0, 1.5]))
        .nominal_state(nominal.clone())
        .parameters(json!({
            "constants": params,
            "discretization": "rk4",
            "states": ["c", "T", "h"],
            "inputs": ["Tc", "F"],
            "output": "y = T",
            "reported_steady_state": CSTR_STEADY_STATE,
            "computed_steady_state": nominal.as_slice(),
            "steady_input": CSTR_STEADY_INPUT,
        }))
        .build()
}
