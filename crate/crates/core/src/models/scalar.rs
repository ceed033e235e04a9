use std::sync::Arc;

use serde_json::json;

use super::{Dims, Dynamics, Jacobians, LinearStructure, SystemModel};
use crate::error::ModelError;
use crate::linalg::{Matrix, Vector};

/// `x+ = x + w`, `y = x + v`; no input.
#[derive(Debug)]
struct ScalarIntegrator;

impl Dynamics for ScalarIntegrator {
    fn step(&self, x: &Vector, _u: &Vector, w: &Vector) -> Result<Vector, ModelError> {
        Ok(x + w)
    }

    fn output(&self, x: &Vector, _u: &Vector) -> Result<Vector, ModelError> {
        Ok(x.clone())
    }

    fn jacobians(&self, _x: &Vector, _u: &Vector, _w: &Vector) -> Option<Result<Jacobians, ModelError>> {
        let one = Matrix::identity(1, 1);
        Some(Ok(Jacobians { fx: one.clone(), fw: one.clone(), hx: one }))
    }
}

pub fn scalar_integrator() -> SystemModel {
    let dims = Dims { n: 1, m: 0, q: 1, p: 1 };
    SystemModel::builder("scalar", dims, Arc::new(ScalarIntegrator))
        .additive_disturbance(true)
        .linear(LinearStructure {
            a: Matrix::identity(1, 1),
            b: Matrix::zeros(1, 0),
            c: Matrix::identity(1, 1),
        })
        .parameters(json!({ "equations": "x+ = x + w, y = x + v" }))
        .build()
}
