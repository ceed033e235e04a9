//! Linear Kalman filter, Rauch-Tung-Striebel smoother, and the EKF
//! covariance update used for the MHE prior weight.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::digest;
use crate::linalg::{spd_inverse, symmetrize, Matrix, Vector};
use crate::models::SystemModel;
use crate::types::{CostSpec, DataBatch, EstimateSequence, EstimatorKind};

/// How the prior weight evolves over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightUpdate {
    #[default]
    Constant,
    Ekf,
}

const REGULARIZATION: f64 = 1e-12;

/// Inverse of an innovation covariance, regularized when singular. The
/// flag reports whether regularization was needed.
fn innovation_inverse(s: &Matrix) -> (Matrix, bool) {
    let s = symmetrize(s);
    match spd_inverse(&s) {
        Some(inv) => (inv, false),
        None => {
            let reg = &s + Matrix::identity(s.nrows(), s.ncols()) * REGULARIZATION;
            let inv = spd_inverse(&reg)
                .or_else(|| reg.clone().try_inverse())
                .unwrap_or_else(|| Matrix::identity(s.nrows(), s.ncols()) / REGULARIZATION);
            (inv, true)
        }
    }
}

/// Joseph-form measurement update of `p_pred`; returns `(gain, p_post, regularized)`.
fn joseph_update(p_pred: &Matrix, c: &Matrix, rcov: &Matrix) -> (Matrix, Matrix, bool) {
    let s = c * p_pred * c.transpose() + rcov;
    let (s_inv, flagged) = innovation_inverse(&s);
    let k = p_pred * c.transpose() * s_inv;
    let i_kc = Matrix::identity(p_pred.nrows(), p_pred.nrows()) - &k * c;
    let p = &i_kc * p_pred * i_kc.transpose() + &k * rcov * k.transpose();
    (k, symmetrize(&p), flagged)
}

/// One EKF predict-and-correct step on the weight `W = P^{-1}` with the
/// given linearization `(A, C)` and covariances `Q^{-1}`, `R^{-1}`.
/// Returns the new weight and whether any inverse had to be regularized.
pub fn ekf_weight_update(a: &Matrix, c: &Matrix, weight: &Matrix, qcov: &Matrix, rcov: &Matrix) -> (Matrix, bool) {
    let (p, mut flagged) = innovation_inverse(weight);
    let p_pred = symmetrize(&(a * p * a.transpose() + qcov));
    let (_, p_post, f2) = joseph_update(&p_pred, c, rcov);
    flagged |= f2;
    let (w, f3) = innovation_inverse(&p_post);
    (symmetrize(&w), flagged || f3)
}

/// EKF weight update linearized at the prior mean `x̄`, with covariances
/// taken as the inverses of the cost weights.
pub fn update_prior_weight_ekf(
    model: &SystemModel,
    mean: &Vector,
    weight: &Matrix,
    u: &Vector,
    cost: &CostSpec,
) -> Result<(Matrix, bool)> {
    let dims = model.dims();
    let jac = model.jacobians(mean, u, &Vector::zeros(dims.q))?;
    let qcov = spd_inverse(cost.q()).ok_or_else(|| Error::NotPositiveDefinite("Q".into()))?;
    let rcov = spd_inverse(cost.r()).ok_or_else(|| Error::NotPositiveDefinite("R".into()))?;
    let qcov = &jac.fw * qcov * jac.fw.transpose();
    Ok(ekf_weight_update(&jac.fx, &jac.hx, weight, &qcov, &rcov))
}

/// Forward pass of the Kalman filter with the smoother's bookkeeping.
#[derive(Debug, Clone)]
pub struct KalmanRun {
    pub filtered: Vec<Vector>,
    pub filtered_cov: Vec<Matrix>,
    pub predicted: Vec<Vector>,
    pub predicted_cov: Vec<Matrix>,
    /// Time indices whose innovation covariance had to be regularized.
    pub regularized: Vec<i64>,
}

fn linear_parts(model: &SystemModel) -> Result<(&Matrix, &Matrix, &Matrix)> {
    match model.linear() {
        Some(l) if model.additive_disturbance() => Ok((&l.a, &l.b, &l.c)),
        _ => Err(Error::Unsupported(format!("Kalman recursions need a linear model, got `{}`", model.id()))),
    }
}

fn check_cov(name: &str, m: &Matrix, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::InvalidConfig(format!("{name} must be {dim}x{dim}")));
    }
    Ok(())
}

/// Kalman filter run: `x̂_0`, `P_0` describe the state before `y_0` is
/// processed.
pub fn kalman_run(
    model: &SystemModel,
    data: &DataBatch,
    qcov: &Matrix,
    rcov: &Matrix,
    x0: &Vector,
    p0: &Matrix,
) -> Result<KalmanRun> {
    let (a, b, c) = linear_parts(model)?;
    let dims = model.dims();
    check_cov("Qcov", qcov, dims.n)?;
    check_cov("Rcov", rcov, dims.p)?;
    check_cov("P0", p0, dims.n)?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty data batch".into()));
    }
    let len = data.len();
    let mut run = KalmanRun {
        filtered: Vec::with_capacity(len),
        filtered_cov: Vec::with_capacity(len),
        predicted: Vec::with_capacity(len),
        predicted_cov: Vec::with_capacity(len),
        regularized: Vec::new(),
    };
    let mut x_pred = x0.clone();
    let mut p_pred = p0.clone();
    for k in 0..len {
        let (gain, p_post, flagged) = joseph_update(&p_pred, c, rcov);
        if flagged {
            run.regularized.push(data.t0 + k as i64);
        }
        let x_post = &x_pred + &gain * (&data.outputs[k] - c * &x_pred);
        run.predicted.push(x_pred);
        run.predicted_cov.push(p_pred);
        if k + 1 < len {
            x_pred = a * &x_post + b * &data.inputs[k];
            p_pred = symmetrize(&(a * &p_post * a.transpose() + qcov));
        } else {
            x_pred = Vector::zeros(0);
            p_pred = Matrix::zeros(0, 0);
        }
        run.filtered.push(x_post);
        run.filtered_cov.push(p_post);
    }
    Ok(run)
}

fn sequence(kind: EstimatorKind, data: &DataBatch, states: Vec<Vector>, config: serde_json::Value) -> EstimateSequence {
    EstimateSequence {
        kind,
        delay: 0,
        start: data.t0,
        states,
        disturbances: None,
        config_digest: digest(&config),
        label: kind.as_str().to_string(),
    }
}

fn config(model: &SystemModel, qcov: &Matrix, rcov: &Matrix, x0: &Vector, p0: &Matrix) -> serde_json::Value {
    json!({ "model": model.id(), "qcov": qcov, "rcov": rcov, "x0": x0, "p0": p0 })
}

pub fn kalman_filter(
    model: &SystemModel,
    data: &DataBatch,
    qcov: &Matrix,
    rcov: &Matrix,
    x0: &Vector,
    p0: &Matrix,
) -> Result<EstimateSequence> {
    let run = kalman_run(model, data, qcov, rcov, x0, p0)?;
    let cfg = config(model, qcov, rcov, x0, p0);
    Ok(sequence(EstimatorKind::Kf, data, run.filtered, cfg))
}

/// Kalman filter forward pass followed by the Rauch-Tung-Striebel
/// backward recursion over the whole batch.
pub fn fixed_interval_smoother(
    model: &SystemModel,
    data: &DataBatch,
    qcov: &Matrix,
    rcov: &Matrix,
    x0: &Vector,
    p0: &Matrix,
) -> Result<EstimateSequence> {
    let run = kalman_run(model, data, qcov, rcov, x0, p0)?;
    let (a, _, _) = linear_parts(model)?;
    let len = run.filtered.len();
    let mut smoothed = run.filtered.clone();
    for k in (0..len - 1).rev() {
        let p_next = &run.predicted_cov[k + 1];
        let p_inv = spd_inverse(p_next)
            .or_else(|| p_next.clone().try_inverse())
            .ok_or_else(|| Error::NotPositiveDefinite(format!("predicted covariance at t = {}", data.t0 + k as i64 + 1)))?;
        let gain = &run.filtered_cov[k] * a.transpose() * p_inv;
        smoothed[k] = &run.filtered[k] + gain * (&smoothed[k + 1] - &run.predicted[k + 1]);
    }
    let cfg = config(model, qcov, rcov, x0, p0);
    Ok(sequence(EstimatorKind::Fis, data, smoothed, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::is_spd;
    use crate::models::{make_random_lti, scalar_integrator};
    use crate::simulate::{simulate, InputProfile, NoiseSpec};
    use crate::solver::{solve_linear_horizon, HorizonProblem, QuadraticPrior, SolverOptions};
    use proptest::prelude::*;

    fn mat(rows: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, v.len() / rows, v)
    }

    #[test]
    fn scalar_gain_matches_hand_algebra() {
        let model = scalar_integrator();
        let data = DataBatch {
            t0: 0,
            inputs: vec![Vector::zeros(0)],
            outputs: vec![Vector::from_element(1, 2.0)],
            truth: None,
            meta: Default::default(),
        };
        let (p, r, x0) = (3.0, 0.5, 1.0);
        let run = kalman_run(&model, &data, &mat(1, &[1.0]), &mat(1, &[r]), &Vector::from_element(1, x0), &mat(1, &[p]))
            .unwrap();
        let k = p / (p + r);
        assert!((run.filtered[0][0] - (x0 + k * (2.0 - x0))).abs() < 1e-15);
        assert!((run.filtered_cov[0][(0, 0)] - (1.0 - k) * p).abs() < 1e-14);
    }

    #[test]
    fn noise_free_data_with_exact_start_is_tracked() {
        let model = make_random_lti(4, 2, 2, 3);
        let x0 = Vector::from_vec(vec![0.5, -1.0, 0.2, 0.0]);
        let data = simulate(&model, &x0, &InputProfile::Sinusoid { amplitude: 1.0, period: 15.0, offset: vec![] }, &NoiseSpec::none(4, 2), 40, 0)
            .unwrap();
        let kf = kalman_filter(&model, &data, &Matrix::identity(4, 4), &Matrix::identity(2, 2), &x0, &(Matrix::identity(4, 4) * 1e-14))
            .unwrap();
        for (est, x) in kf.states.iter().zip(&data.truth.as_ref().unwrap().states) {
            assert!((est - x).amax() < 1e-9);
        }
    }

    #[test]
    fn smoother_ends_at_filter_estimate() {
        let model = make_random_lti(3, 1, 2, 8);
        let data = simulate(&model, &Vector::zeros(3), &InputProfile::Sinusoid { amplitude: 1.0, period: 10.0, offset: vec![] }, &NoiseSpec::uniform(vec![0.1; 3], vec![0.2; 2]), 30, 4)
            .unwrap();
        let args = (Matrix::identity(3, 3), Matrix::identity(2, 2) * 0.5, Vector::zeros(3), Matrix::identity(3, 3));
        let kf = kalman_filter(&model, &data, &args.0, &args.1, &args.2, &args.3).unwrap();
        let fis = fixed_interval_smoother(&model, &data, &args.0, &args.1, &args.2, &args.3).unwrap();
        assert_eq!(kf.states.last(), fis.states.last());
        assert_eq!(fis.kind, EstimatorKind::Fis);
    }

    #[test]
    fn smoother_equals_prior_weighted_batch_problem() {
        let model = make_random_lti(5, 2, 3, 21);
        let data = simulate(&model, &Vector::zeros(5), &InputProfile::Sinusoid { amplitude: 1.0, period: 25.0, offset: vec![] }, &NoiseSpec::uniform(vec![0.05; 5], vec![0.1; 3]), 50, 9)
            .unwrap();
        let qcov = Matrix::identity(5, 5) * 0.3;
        let rcov = Matrix::identity(3, 3) * 2.0;
        let x0 = Vector::from_vec(vec![0.3, -0.1, 0.0, 0.2, 1.0]);
        let p0 = Matrix::identity(5, 5) * 0.7;
        let fis = fixed_interval_smoother(&model, &data, &qcov, &rcov, &x0, &p0).unwrap();
        let rinv = spd_inverse(&rcov).unwrap();
        let cost = CostSpec::new(spd_inverse(&qcov).unwrap(), rinv.clone(), rinv).unwrap();
        let problem = HorizonProblem {
            model: &model,
            start: 0,
            inputs: &data.inputs,
            outputs: &data.outputs,
            cost: &cost,
            prior: Some(QuadraticPrior::new(x0, spd_inverse(&p0).unwrap()).unwrap()),
            options: SolverOptions::default(),
        };
        let qp = solve_linear_horizon(&problem).unwrap();
        for (a, b) in fis.states.iter().zip(&qp.xs) {
            assert!((a - b).amax() < 1e-8);
        }
    }

    #[test]
    fn riccati_fixed_point_is_preserved() {
        let a = mat(2, &[0.9, 0.2, 0.0, 0.7]);
        let c = mat(1, &[1.0, 0.5]);
        let qcov = Matrix::identity(2, 2) * 0.1;
        let rcov = mat(1, &[0.4]);
        // oracle: iterate the covariance-form recursion to its fixed point
        let mut p = Matrix::identity(2, 2);
        for _ in 0..2000 {
            let pp = &a * &p * a.transpose() + &qcov;
            let s = (&c * &pp * c.transpose() + &rcov)[(0, 0)];
            p = &pp - &pp * c.transpose() * &c * &pp / s;
        }
        let w = p.clone().try_inverse().unwrap();
        let (w_next, flagged) = ekf_weight_update(&a, &c, &w, &qcov, &rcov);
        assert!(!flagged);
        assert!((&w_next - &w).amax() < 1e-8 * w.amax());
    }

    #[test]
    fn static_identity_update_adds_information() {
        let sigma2 = 0.25;
        let w = mat(2, &[2.0, 0.3, 0.3, 1.0]);
        let (w_next, _) = ekf_weight_update(&Matrix::identity(2, 2), &Matrix::identity(2, 2), &w, &Matrix::zeros(2, 2), &(Matrix::identity(2, 2) * sigma2));
        let expected = &w + Matrix::identity(2, 2) / sigma2;
        assert!((&w_next - &expected).amax() < 1e-10);
    }

    #[test]
    fn singular_innovation_is_flagged() {
        let (w, flagged) = ekf_weight_update(&Matrix::identity(1, 1), &Matrix::zeros(1, 1), &Matrix::identity(1, 1), &Matrix::zeros(1, 1), &Matrix::zeros(1, 1));
        assert!(flagged);
        assert!(w[(0, 0)].is_finite());
    }

    #[test]
    fn nonlinear_models_are_rejected() {
        let model = crate::models::batch_reactor();
        let data = DataBatch { t0: 0, inputs: vec![Vector::zeros(2)], outputs: vec![Vector::zeros(1)], truth: None, meta: Default::default() };
        let r = kalman_filter(&model, &data, &Matrix::identity(2, 2), &Matrix::identity(1, 1), &Vector::zeros(2), &Matrix::identity(2, 2));
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    proptest! {
        #[test]
        fn ekf_update_keeps_weight_positive_definite(
            entries in proptest::collection::vec(-2.0f64..2.0, 9),
            cvals in proptest::collection::vec(-2.0f64..2.0, 3),
            diag in proptest::collection::vec(0.01f64..10.0, 3),
        ) {
            let a = Matrix::from_row_slice(3, 3, &entries);
            let c = Matrix::from_row_slice(1, 3, &cvals);
            let w = Matrix::from_diagonal(&Vector::from_vec(diag));
            let (w_next, _) = ekf_weight_update(&a, &c, &w, &(Matrix::identity(3, 3) * 0.01), &mat(1, &[0.5]));
            prop_assert!(is_spd(&w_next));
        }
    }
}
