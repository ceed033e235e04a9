use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use super::{Dims, Dynamics, Jacobians, SystemModel};
use crate::error::ModelError;
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReactorParams {
    pub k1: f64,
    pub k2: f64,
    pub dt: f64,
}

impl Default for ReactorParams {
    fn default() -> Self {
        Self { k1: 0.16, k2: 0.0064, dt: 0.1 }
    }
}

/// Euler-discretized reversible reaction `2A <-> B` with additive inputs.
#[derive(Debug)]
struct BatchReactor(ReactorParams);

impl BatchReactor {
    fn rate(&self, x: &Vector) -> (f64, f64) {
        let ReactorParams { k1, k2, .. } = self.0;
        (-2.0 * k1 * x[0] * x[0] + 2.0 * k2 * x[1], k1 * x[0] * x[0] - k2 * x[1])
    }
}

impl Dynamics for BatchReactor {
    fn step(&self, x: &Vector, u: &Vector, w: &Vector) -> Result<Vector, ModelError> {
        let dt = self.0.dt;
        let (r1, r2) = self.rate(x);
        let fa = Vector::from_vec(vec![x[0] + dt * r1 + u[0], x[1] + dt * r2 + u[1]]);
        Ok(fa + w)
    }

    fn output(&self, x: &Vector, _u: &Vector) -> Result<Vector, ModelError> {
        Ok(Vector::from_element(1, x[0] + x[1]))
    }

    fn jacobians(&self, x: &Vector, _u: &Vector, _w: &Vector) -> Option<Result<Jacobians, ModelError>> {
        let ReactorParams { k1, k2, dt } = self.0;
        let fx = Matrix::from_row_slice(
            2,
            2,
            &[
                1.0 - dt * 4.0 * k1 * x[0],
                dt * 2.0 * k2,
                dt * 2.0 * k1 * x[0],
                1.0 - dt * k2,
            ],
        );
        Some(Ok(Jacobians {
            fx,
            fw: Matrix::identity(2, 2),
            hx: Matrix::from_row_slice(1, 2, &[1.0, 1.0]),
        }))
    }
}

pub fn batch_reactor() -> SystemModel {
    let params = ReactorParams::default();
    let dims = Dims { n: 2, m: 2, q: 2, p: 1 };
    SystemModel::builder("reactor", dims, Arc::new(BatchReactor(params)))
        .additive_disturbance(true)
        .nominal_state(Vector::from_vec(vec![3.0, 0.0]))
        .parameters(json!({
            "k1": params.k1,
            "k2": params.k2,
            "dt": params.dt,
            "discretization": "euler",
            "output": "y = x1 + x2",
        }))
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::finite_difference_jacobians;

    #[test]
    fn euler_step_from_initial_charge() {
        let m = batch_reactor();
        let x = Vector::from_vec(vec![3.0, 0.0]);
        let next = m.step(&x, &Vector::zeros(2), &Vector::zeros(2)).unwrap();
        assert!((next[0] - 2.712).abs() < 1e-12);
        assert!((next[1] - 0.144).abs() < 1e-12);
        assert_eq!(m.output(&x, &Vector::zeros(2)).unwrap()[0], 3.0);
    }

    #[test]
    fn equilibrium_is_fixed() {
        let m = batch_reactor();
        // k1 x1^2 = k2 x2
        let x1: f64 = 0.5;
        let x = Vector::from_vec(vec![x1, 0.16 * x1 * x1 / 0.0064]);
        let next = m.step(&x, &Vector::zeros(2), &Vector::zeros(2)).unwrap();
        assert!((next - &x).amax() < 1e-14);
    }

    #[test]
    fn difference_jacobian_matches_hand_derivative() {
        let m = batch_reactor();
        let x = Vector::from_vec(vec![3.0, 0.0]);
        let u = Vector::zeros(2);
        let fd = finite_difference_jacobians(&m, &x, &u, &Vector::zeros(2)).unwrap();
        // d/dx of [x1 - 0.032 x1^2 + 0.00128 x2, x2 + 0.016 x1^2 - 0.00064 x2]
        let hand = Matrix::from_row_slice(2, 2, &[1.0 - 0.064 * 3.0, 0.00128, 0.032 * 3.0, 1.0 - 0.00064]);
        assert!((&fd.fx - &hand).amax() < 1e-5);
        assert!((m.jacobians(&x, &u, &Vector::zeros(2)).unwrap().fx - hand).amax() < 1e-14);
    }
}
