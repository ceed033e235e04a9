use std::sync::Arc;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::Serialize;
use serde_json::json;

use super::{discretize, Dims, Discretization, Dynamics, SystemModel};
use crate::error::ModelError;
use crate::linalg::Vector;

/// Rigid quadrotor with blade-flapping drag. The model input is the vector of
/// rotor speeds; thrust and torques are linear in their squares.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub inertia: [f64; 3],
    pub gravity: f64,
    pub arm: f64,
    pub c_thrust: f64,
    pub c_torque: f64,
    pub flapping: f64,
    pub yaw_damping: f64,
    pub dt: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass: 1.9,
            inertia: [5.9e-3, 5.9e-3, 10.7e-3],
            gravity: 9.8,
            arm: 0.25,
            c_thrust: 1e-5,
            c_torque: 1e-6,
            flapping: 1.14,
            yaw_damping: 0.0297,
            dt: 0.05,
        }
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Body-to-inertial rotation for roll, pitch, yaw (z-y-x convention).
pub fn rotation(xi: &Vector3<f64>) -> Matrix3<f64> {
    let (sf, cf) = xi[0].sin_cos();
    let (st, ct) = xi[1].sin_cos();
    let (sp, cp) = xi[2].sin_cos();
    let rz = Matrix3::new(cp, -sp, 0.0, sp, cp, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(ct, 0.0, st, 0.0, 1.0, 0.0, -st, 0.0, ct);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cf, -sf, 0.0, sf, cf);
    rz * ry * rx
}

/// Maps body rates to Euler angle rates.
pub fn euler_rate_map(xi: &Vector3<f64>) -> Result<Matrix3<f64>, ModelError> {
    let (sf, cf) = xi[0].sin_cos();
    let (st, ct) = xi[1].sin_cos();
    if ct.abs() < 1e-9 || !ct.is_finite() {
        return Err(ModelError::Singularity { pitch: xi[1] });
    }
    let tt = st / ct;
    Ok(Matrix3::new(
        1.0,
        sf * tt,
        cf * tt,
        0.0,
        cf,
        -sf,
        0.0,
        sf / ct,
        cf / ct,
    ))
}

/// Hover rotor speed: four equal rotors carrying the weight.
pub fn hover_speed(params: &QuadrotorParams) -> f64 {
    (params.mass * params.gravity / (4.0 * params.c_thrust)).sqrt()
}

impl QuadrotorParams {
    /// `[T, tau] = M [w1^2, .., w4^2]`
    pub fn mixer(&self) -> Matrix4<f64> {
        let (ct, cq, l) = (self.c_thrust, self.c_torque, self.arm);
        Matrix4::new(
            ct, ct, ct, ct,
            0.0, -l * ct, 0.0, l * ct,
            l * ct, 0.0, -l * ct, 0.0,
            -cq, cq, -cq, cq,
        )
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.inertia))
    }

    fn flapping_matrix(&self) -> Matrix3<f64> {
        skew(&Vector3::z()) * self.flapping
    }

    fn drag_matrix(&self) -> Matrix3<f64> {
        let mut d = Matrix3::zeros();
        d[(2, 2)] = self.yaw_damping;
        d
    }

    pub fn rhs(&self, x: &Vector, u: &Vector) -> Result<Vector, ModelError> {
        let xi = Vector3::new(x[3], x[4], x[5]);
        let v = Vector3::new(x[6], x[7], x[8]);
        let omega = Vector3::new(x[9], x[10], x[11]);
        let speeds_sq = Vector4::new(u[0] * u[0], u[1] * u[1], u[2] * u[2], u[3] * u[3]);
        let wrench = self.mixer() * speeds_sq;
        let thrust = wrench[0];
        let torque = Vector3::new(wrench[1], wrench[2], wrench[3]);
        let r = rotation(&xi);
        let e3 = Vector3::z();
        let j = self.inertia_matrix();
        let dv = e3 * self.gravity - r * e3 * (thrust / self.mass) - r * self.flapping_matrix() * omega / self.mass;
        let dxi = euler_rate_map(&xi)? * omega;
        let domega = j
            .try_inverse()
            .expect("inertia is diagonal positive")
            * (-omega.cross(&(j * omega)) + torque - self.drag_matrix() * omega);
        let mut out = Vector::zeros(12);
        out.fixed_rows_mut::<3>(0).copy_from(&v);
        out.fixed_rows_mut::<3>(3).copy_from(&dxi);
        out.fixed_rows_mut::<3>(6).copy_from(&dv);
        out.fixed_rows_mut::<3>(9).copy_from(&domega);
        Ok(out)
    }
}

#[derive(Debug)]
struct Quadrotor(QuadrotorParams);

impl Dynamics for Quadrotor {
    fn step(&self, x: &Vector, u: &Vector, w: &Vector) -> Result<Vector, ModelError> {
        let rhs = |x: &Vector, u: &Vector| self.0.rhs(x, u);
        Ok(discretize(&rhs, Discretization::Euler, self.0.dt, x, u)? + w)
    }

    fn output(&self, x: &Vector, _u: &Vector) -> Result<Vector, ModelError> {
        Ok(x.rows(0, 6).into_owned())
    }
}

pub fn quadrotor() -> SystemModel {
    let params = QuadrotorParams::default();
    let dims = Dims { n: 12, m: 4, q: 12, p: 6 };
    SystemModel::builder("quadrotor", dims, Arc::new(Quadrotor(params)))
        .additive_disturbance(true)
        .parameters(json!({
            "constants": params,
            "discretization": "euler",
            "states": ["z1", "z2", "z3", "phi", "theta", "psi", "v1", "v2", "v3", "Omega1", "Omega2", "Omega3"],
            "inputs": "rotor speeds omega_i (thrust and torque use omega_i^2)",
            "frame": "inertial z axis points down",
            "output": "y = [z, xi]",
            "hover_speed": hover_speed(&params),
        }))
        .build()
}
