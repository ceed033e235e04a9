//! Seeded generation of ground-truth trajectories and measurement data.

use std::f64::consts::PI;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::models::{euler_rate_map, rotation, QuadrotorParams, SystemModel};
use crate::types::{BatchMeta, DataBatch, Truth};

/// 32-byte stream key derived from a master seed and a label.
pub fn stream_seed(master: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

/// Independent, reproducible random stream for `(master, label)`.
pub fn split_seed(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_seed(master, label))
}

/// Deterministic `offset + amplitude * sin(frequency * t + phase)` per
/// component; empty vectors mean zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    #[serde(default)]
    pub offset: Vec<f64>,
    #[serde(default)]
    pub amplitude: Vec<f64>,
    #[serde(default)]
    pub frequency: Vec<f64>,
    #[serde(default)]
    pub phase: Vec<f64>,
}

impl Overlay {
    pub fn constant(offset: Vec<f64>) -> Self {
        Self { offset, ..Self::default() }
    }

    pub fn sinusoid(dim: usize, amplitude: f64, frequency: f64) -> Self {
        Self {
            offset: vec![],
            amplitude: vec![amplitude; dim],
            frequency: vec![frequency; dim],
            phase: vec![],
        }
    }

    pub fn value(&self, t: i64, dim: usize) -> Vector {
        let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        Vector::from_fn(dim, |i, _| {
            get(&self.offset, i)
                + get(&self.amplitude, i) * (get(&self.frequency, i) * t as f64 + get(&self.phase, i)).sin()
        })
    }
}

/// Uniform disturbance and noise on symmetric boxes, plus optional overlays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub w_bounds: Vec<f64>,
    pub v_bounds: Vec<f64>,
    #[serde(default)]
    pub w_overlay: Option<Overlay>,
    #[serde(default)]
    pub v_overlay: Option<Overlay>,
}

impl NoiseSpec {
    pub fn none(q: usize, p: usize) -> Self {
        Self { w_bounds: vec![0.0; q], v_bounds: vec![0.0; p], w_overlay: None, v_overlay: None }
    }

    pub fn uniform(w_bounds: Vec<f64>, v_bounds: Vec<f64>) -> Self {
        Self { w_bounds, v_bounds, w_overlay: None, v_overlay: None }
    }

    fn check(&self, q: usize, p: usize) -> Result<()> {
        if self.w_bounds.len() != q || self.v_bounds.len() != p {
            return Err(Error::InvalidConfig(format!(
                "noise bounds have lengths ({}, {}) but the model needs ({q}, {p})",
                self.w_bounds.len(),
                self.v_bounds.len()
            )));
        }
        if self.w_bounds.iter().chain(&self.v_bounds).any(|b| b.is_nan() || *b < 0.0) {
            return Err(Error::InvalidConfig("noise bounds must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Uniform sample on `[-b, b]` per component.
pub fn sample_uniform(rng: &mut impl Rng, bounds: &[f64]) -> Vector {
    Vector::from_fn(bounds.len(), |i, _| {
        let u: f64 = rng.random();
        -bounds[i] + 2.0 * bounds[i] * u
    })
}

/// Open-loop input sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputProfile {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// `u_i = offset_i + amplitude * sin(2 pi t / period + 2 pi i / m)`
    Sinusoid {
        amplitude: f64,
        period: f64,
        #[serde(default)]
        offset: Vec<f64>,
    },
    /// First input follows a trapezoid between `high` and `low`; the others
    /// are held at `rest`.
    Trapezoid {
        high: f64,
        low: f64,
        ramp: usize,
        period: usize,
        rest: Vec<f64>,
    },
    /// At `t = every * i`, `i = 1..=count`, the input resets the state so
    /// that `x_{t+1} = target + w_t` (input entering additively).
    PeriodicRefill {
        every: usize,
        count: usize,
        target: Vec<f64>,
    },
    /// Quadrotor climbing while its tilt direction rotates. Rotor speeds are
    /// computed on the noise-free trajectory so that attitude follows
    /// `phi = a(t) sin(w t)`, `theta = a(t) cos(w t)` and the climb rate
    /// follows a smooth ramp.
    SpiralOpenloop {
        tilt: f64,
        spin_period: f64,
        climb_rate: f64,
        ramp_time: f64,
    },
}

impl InputProfile {
    pub fn cstr_default() -> Self {
        InputProfile::Trapezoid { high: 300.0, low: 275.0, ramp: 10, period: 80, rest: vec![0.1] }
    }

    pub fn reactor_default() -> Self {
        InputProfile::PeriodicRefill { every: 50, count: 7, target: vec![3.0, 0.0] }
    }

    pub fn spiral_default() -> Self {
        InputProfile::SpiralOpenloop { tilt: 0.1, spin_period: 4.0, climb_rate: 0.5, ramp_time: 2.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InputProfile::Zero => "zero",
            InputProfile::Constant { .. } => "constant",
            InputProfile::Sinusoid { .. } => "sinusoid",
            InputProfile::Trapezoid { .. } => "trapezoid",
            InputProfile::PeriodicRefill { .. } => "periodic_refill",
            InputProfile::SpiralOpenloop { .. } => "spiral_openloop",
        }
    }

    /// Default parameters for a profile name on a given model.
    pub fn by_name(name: &str, model: &SystemModel) -> Result<Self> {
        let m = model.dims().m;
        Ok(match name {
            "zero" => InputProfile::Zero,
            "constant" => InputProfile::Constant { value: vec![0.0; m] },
            "sinusoid" => InputProfile::Sinusoid { amplitude: 1.0, period: 100.0, offset: vec![] },
            "trapezoid" => InputProfile::cstr_default(),
            "periodic_refill" => InputProfile::reactor_default(),
            "spiral_openloop" => InputProfile::spiral_default(),
            other => return Err(Error::InvalidConfig(format!("unknown input profile `{other}`"))),
        })
    }
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

fn trapezoid_value(t: usize, high: f64, low: f64, ramp: usize, period: usize) -> f64 {
    let plateau = (period - 2 * ramp) / 2;
    let k = t % period;
    let ramp_frac = |i: usize| if ramp == 0 { 1.0 } else { i as f64 / ramp as f64 };
    if k < plateau {
        high
    } else if k < plateau + ramp {
        high + (low - high) * ramp_frac(k - plateau)
    } else if k < 2 * plateau + ramp {
        low
    } else {
        low + (high - low) * ramp_frac(k - 2 * plateau - ramp)
    }
}

fn spiral_inputs(
    model: &SystemModel,
    x0: &Vector,
    len: usize,
    tilt: f64,
    spin_period: f64,
    climb_rate: f64,
    ramp_time: f64,
) -> Result<Vec<Vector>> {
    if model.id() != "quadrotor" {
        return Err(Error::InvalidConfig("spiral_openloop requires the quadrotor model".into()));
    }
    let p = QuadrotorParams::default();
    let dt = p.dt;
    let spin = 2.0 * PI / spin_period;
    let ramp = |t: f64| if ramp_time > 0.0 { smoothstep(t / ramp_time) } else { 1.0 };
    let attitude = |k: usize| {
        let t = k as f64 * dt;
        let a = tilt * ramp(t);
        Vector3::new(a * (spin * t).sin(), a * (spin * t).cos(), 0.0)
    };
    let climb = |k: usize| -climb_rate * ramp(k as f64 * dt);
    let j = p.inertia_matrix();
    let mixer_inv = p.mixer().try_inverse().expect("mixer is invertible");
    let e3 = Vector3::z();
    let mut x = x0.clone();
    let mut inputs = Vec::with_capacity(len);
    for k in 0..len {
        let xi = Vector3::new(x[3], x[4], x[5]);
        let omega = Vector3::new(x[9], x[10], x[11]);
        let xi_next = xi + euler_rate_map(&xi)? * omega * dt;
        let gamma_next = euler_rate_map(&xi_next)?;
        let omega_next = gamma_next
            .try_inverse()
            .ok_or(crate::error::ModelError::Singularity { pitch: xi_next[1] })?
            * (attitude(k + 2) - xi_next)
            / dt;
        let drag = Vector3::new(0.0, 0.0, p.yaw_damping * omega[2]);
        let torque = j * (omega_next - omega) / dt + omega.cross(&(j * omega)) + drag;
        let r = rotation(&xi);
        let flap = (r * (Vector3::z().cross(&omega) * p.flapping))[2];
        let tilt_factor = (r * e3)[2];
        let thrust = (p.mass * (p.gravity - (climb(k + 1) - x[8]) / dt) - flap) / tilt_factor;
        let sq = mixer_inv * Vector4::new(thrust, torque[0], torque[1], torque[2]);
        let u = Vector::from_fn(4, |i, _| sq[i].max(0.0).sqrt());
        x = model.step(&x, &u, &Vector::zeros(12))?;
        inputs.push(u);
    }
    Ok(inputs)
}

/// Simulates `T` steps from `x0`, returning `T + 1` samples.
pub fn simulate(
    model: &SystemModel,
    x0: &Vector,
    profile: &InputProfile,
    noise: &NoiseSpec,
    horizon: usize,
    seed: u64,
) -> Result<DataBatch> {
    let dims = model.dims();
    noise.check(dims.q, dims.p)?;
    if x0.len() != dims.n {
        return Err(Error::InvalidConfig(format!("x0 has length {} (expected {})", x0.len(), dims.n)));
    }
    if let Some(c) = model.state_set().first_violation(x0, 0.0) {
        return Err(Error::ConstraintViolation { t: 0, component: c, value: x0[c] });
    }
    let len = horizon + 1;
    let precomputed = match profile {
        InputProfile::SpiralOpenloop { tilt, spin_period, climb_rate, ramp_time } => {
            Some(spiral_inputs(model, x0, len, *tilt, *spin_period, *climb_rate, *ramp_time)?)
        }
        _ => None,
    };
    let mut rng_w = split_seed(seed, "w");
    let mut rng_v = split_seed(seed, "v");
    let zero_w = Vector::zeros(dims.q);
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(len);
    let mut inputs = Vec::with_capacity(len);
    let mut outputs = Vec::with_capacity(len);
    let mut disturbances = Vec::with_capacity(horizon);
    let mut noises = Vec::with_capacity(len);
    for k in 0..len {
        let t = k as i64;
        let u = match profile {
            InputProfile::Zero => Vector::zeros(dims.m),
            InputProfile::Constant { value } => Vector::from_column_slice(value),
            InputProfile::Sinusoid { amplitude, period, offset } => Vector::from_fn(dims.m, |i, _| {
                offset.get(i).copied().unwrap_or(0.0)
                    + amplitude * (2.0 * PI * t as f64 / period + 2.0 * PI * i as f64 / dims.m as f64).sin()
            }),
            InputProfile::Trapezoid { high, low, ramp, period, rest } => {
                let mut u = Vector::zeros(dims.m);
                u[0] = trapezoid_value(k, *high, *low, *ramp, *period);
                for (i, r) in rest.iter().enumerate() {
                    u[i + 1] = *r;
                }
                u
            }
            InputProfile::PeriodicRefill { every, count, target } => {
                if *every > 0 && k > 0 && k % every == 0 && k / every <= *count {
                    Vector::from_column_slice(target) - model.step(&x, &Vector::zeros(dims.m), &zero_w)?
                } else {
                    Vector::zeros(dims.m)
                }
            }
            InputProfile::SpiralOpenloop { .. } => precomputed.as_ref().expect("precomputed")[k].clone(),
        };
        if u.len() != dims.m {
            return Err(Error::InvalidConfig(format!("profile produced {} inputs (expected {})", u.len(), dims.m)));
        }
        let mut v = sample_uniform(&mut rng_v, &noise.v_bounds);
        if let Some(o) = &noise.v_overlay {
            v += o.value(t, dims.p);
        }
        let y = model.output(&x, &u)? + &v;
        states.push(x.clone());
        outputs.push(y);
        noises.push(v);
        if k < horizon {
            let mut w = sample_uniform(&mut rng_w, &noise.w_bounds);
            if let Some(o) = &noise.w_overlay {
                w += o.value(t, dims.q);
            }
            x = model.step(&x, &u, &w)?;
            if let Some(c) = model.state_set().first_violation(&x, 0.0) {
                return Err(Error::ConstraintViolation { t: t + 1, component: c, value: x[c] });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::ConstraintViolation { t: t + 1, component: 0, value: f64::NAN });
            }
            disturbances.push(w);
        }
        inputs.push(u);
    }
    Ok(DataBatch {
        t0: 0,
        inputs,
        outputs,
        truth: Some(Truth { states, disturbances, noise: noises }),
        meta: BatchMeta {
            model: model.id().to_string(),
            seed: Some(seed),
            generation: json!({
                "x0": x0.as_slice(),
                "profile": profile,
                "noise": noise,
                "T": horizon,
            }),
        },
    })
}
