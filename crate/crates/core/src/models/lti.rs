use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

use super::{Dims, Dynamics, Jacobians, LinearStructure, SystemModel};
use crate::error::ModelError;
use crate::linalg::{spectral_radius, Matrix, Vector};
use crate::simulate::split_seed;

#[derive(Debug)]
struct Lti(LinearStructure);

impl Dynamics for Lti {
    fn step(&self, x: &Vector, u: &Vector, w: &Vector) -> Result<Vector, ModelError> {
        Ok(&self.0.a * x + &self.0.b * u + w)
    }

    fn output(&self, x: &Vector, _u: &Vector) -> Result<Vector, ModelError> {
        Ok(&self.0.c * x)
    }

    fn jacobians(&self, _x: &Vector, _u: &Vector, _w: &Vector) -> Option<Result<Jacobians, ModelError>> {
        let n = self.0.a.nrows();
        Some(Ok(Jacobians {
            fx: self.0.a.clone(),
            fw: Matrix::identity(n, n),
            hx: self.0.c.clone(),
        }))
    }
}

/// Random stable system `x+ = A x + B u + w`, `y = C x + v`. `A` is a scaled
/// Gaussian matrix, resampled until its spectral radius is below one.
pub fn make_random_lti(n: usize, m: usize, p: usize, seed: u64) -> SystemModel {
    let mut rng = split_seed(seed, "lti-model");
    let mut gauss = |rows, cols| {
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    };
    let scale = 0.9 / (n as f64).sqrt();
    let mut draws = 0;
    let a = loop {
        let a = gauss(n, n) * scale;
        draws += 1;
        if spectral_radius(&a) < 1.0 {
            break a;
        }
    };
    let b = gauss(n, m);
    let c = gauss(p, n);
    let linear = LinearStructure { a, b, c };
    let dims = Dims { n, m, q: n, p };
    SystemModel::builder(format!("lti:{n}:{m}:{p}:{seed}"), dims, Arc::new(Lti(linear.clone())))
        .additive_disturbance(true)
        .linear(linear.clone())
        .parameters(json!({
            "seed": seed,
            "spectral_radius": spectral_radius(&linear.a),
            "draws": draws,
            "a": linear.a.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "b": linear.b.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "c": linear.c.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        }))
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::finite_difference_jacobians;

    #[test]
    fn same_seed_same_matrices() {
        let a = make_random_lti(5, 2, 3, 42);
        let b = make_random_lti(5, 2, 3, 42);
        assert_eq!(a.linear(), b.linear());
        assert_ne!(a.linear(), make_random_lti(5, 2, 3, 43).linear());
    }

    #[test]
    fn stable_for_many_seeds() {
        for seed in 0..100 {
            let m = make_random_lti(30, 2, 3, seed);
            assert!(spectral_radius(&m.linear().unwrap().a) < 1.0);
        }
    }

    #[test]
    fn origin_is_fixed_and_jacobians_are_exact() {
        let m = make_random_lti(6, 2, 4, 3);
        let z = m.step(&Vector::zeros(6), &Vector::zeros(2), &Vector::zeros(6)).unwrap();
        assert_eq!(z, Vector::zeros(6));
        let lin = m.linear().unwrap();
        let x = Vector::from_fn(6, |i, _| i as f64 - 2.5);
        let fd = finite_difference_jacobians(&m, &x, &Vector::zeros(2), &Vector::zeros(6)).unwrap();
        assert!((&fd.fx - &lin.a).amax() < 1e-6);
        assert!((&fd.hx - &lin.c).amax() < 1e-6);
        assert_eq!(fd.fw, Matrix::identity(6, 6));
    }
}
