//! Metrics for comparing estimators: performance, SSE, regret, turnpike
//! deviation profiles and the i-IOSS accuracy bound.

mod turnpike;

pub use turnpike::{
    default_epsilon, fit_envelope_points, fit_exponential_envelope, turnpike_profile, ArcSummary, Envelope,
    TurnpikeProfile,
};

use crate::error::{Error, Result};
use crate::estimators::reconstruct_disturbances;
use crate::linalg::{lambda_max, lambda_min, Vector};
use crate::models::SystemModel;
use crate::types::{CostSpec, DataBatch, EstimateSequence, IossCertificate};

fn require_cover(seq: &EstimateSequence, a: i64, b: i64) -> Result<()> {
    if seq.covers(a, b) {
        Ok(())
    } else {
        Err(Error::OutOfRange(if a < seq.start { a } else { b }))
    }
}

/// Disturbances `ŵ_j`, `j ∈ [t1, t2 - 1]`, either taken from the sequence or
/// reconstructed from consecutive states.
fn disturbances_on(model: &SystemModel, seq: &EstimateSequence, data: &DataBatch, t1: i64, t2: i64) -> Result<Vec<Vector>> {
    let a = (t1 - seq.start) as usize;
    let b = (t2 - seq.start) as usize;
    match &seq.disturbances {
        Some(ws) if ws.len() >= b => Ok(ws[a..b].to_vec()),
        _ => {
            let inputs = &data.inputs[data.index(t1)?..data.index(t2)?];
            reconstruct_disturbances(model, &seq.states[a..=b], inputs)
        }
    }
}

/// `J_{[t1,t2]} = Σ_{j=t1}^{t2-1} |ŵ_j|²_Q + |y_j − h(x̂_j, u_j)|²_R`.
pub fn performance(model: &SystemModel, seq: &EstimateSequence, data: &DataBatch, cost: &CostSpec, t1: i64, t2: i64) -> Result<f64> {
    if t2 < t1 {
        return Err(Error::InvalidConfig(format!("empty interval [{t1}, {t2}]")));
    }
    if t1 == t2 {
        return Ok(0.0);
    }
    require_cover(seq, t1, t2)?;
    let ws = disturbances_on(model, seq, data, t1, t2)?;
    let mut total = 0.0;
    for (j, w) in (t1..t2).zip(&ws) {
        let k = data.index(j)?;
        let x = &seq.states[(j - seq.start) as usize];
        let e = &data.outputs[k] - model.output(x, &data.inputs[k])?;
        total += cost.stage(w, &e);
    }
    Ok(total)
}

/// Performance per time step on `[t1, t2]`.
pub fn averaged_performance(model: &SystemModel, seq: &EstimateSequence, data: &DataBatch, cost: &CostSpec, t1: i64, t2: i64) -> Result<f64> {
    let j = performance(model, seq, data, cost, t1, t2)?;
    Ok(if t2 > t1 { j / (t2 - t1) as f64 } else { 0.0 })
}

/// `Σ_{j=t1}^{t2} |x̂_j − x_j|²`.
pub fn sse(est: &EstimateSequence, data: &DataBatch, t1: i64, t2: i64) -> Result<f64> {
    let truth = data.truth()?;
    require_cover(est, t1, t2)?;
    let mut total = 0.0;
    for t in t1..=t2 {
        let x = truth.states.get(data.index(t)?).ok_or(Error::MissingTruth)?;
        total += (&est.states[(t - est.start) as usize] - x).norm_squared();
    }
    Ok(total)
}

/// `J(ẑ) − J(z^∞)` on `[t1, t2]`; negative values are reported as is.
pub fn regret(
    model: &SystemModel,
    est: &EstimateSequence,
    benchmark: &EstimateSequence,
    data: &DataBatch,
    cost: &CostSpec,
    t1: i64,
    t2: i64,
) -> Result<f64> {
    Ok(performance(model, est, data, cost, t1, t2)? - performance(model, benchmark, data, cost, t1, t2)?)
}

/// Pointwise state distance between two sequences on `[t1, t2]`.
pub fn deviation_series(est: &EstimateSequence, reference: &EstimateSequence, t1: i64, t2: i64) -> Result<Vec<f64>> {
    require_cover(est, t1, t2)?;
    require_cover(reference, t1, t2)?;
    Ok((t1..=t2).map(|t| (est.get(t).unwrap() - reference.get(t).unwrap()).norm()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyBound {
    pub lhs: f64,
    pub rhs: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Performance of the estimate under the certificate weights.
    pub performance: f64,
    pub max_noise: f64,
}

impl AccuracyBound {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// Error bound at time `tau` implied by an exponential i-IOSS certificate:
/// `|x_τ − x̂_τ|² ≤ C1 η^{τ−t1} |x_{t1} − x̂_{t1}|² + C2 max_j max(|w_j|², |v_j|²) + C3 J_{[t1,t2]}`.
#[allow(clippy::too_many_arguments)]
pub fn accuracy_bound(
    model: &SystemModel,
    cert: &IossCertificate,
    est: &EstimateSequence,
    data: &DataBatch,
    t1: i64,
    t2: i64,
    tau: i64,
) -> Result<AccuracyBound> {
    cert.validate()?;
    if !(t1..=t2).contains(&tau) {
        return Err(Error::OutOfRange(tau));
    }
    let truth = data.truth()?;
    let p1_min = lambda_min(&cert.p1);
    let c1 = lambda_max(&cert.p2) / p1_min;
    let c2 = 4.0 * lambda_max(&cert.q).max(lambda_max(&cert.r)) / (p1_min * (1.0 - cert.eta));
    let c3 = 2.0 / p1_min;
    let cost = CostSpec::new(cert.q.clone(), cert.r.clone(), cert.r.clone())?;
    let performance = performance(model, est, data, &cost, t1, t2)?;
    let mut max_noise: f64 = 0.0;
    for j in t1..tau {
        let k = data.index(j)?;
        let w = truth.disturbances.get(k).ok_or(Error::MissingTruth)?;
        let v = truth.noise.get(k).ok_or(Error::MissingTruth)?;
        max_noise = max_noise.max(w.norm_squared()).max(v.norm_squared());
    }
    let err = |t: i64| -> Result<f64> {
        require_cover(est, t, t)?;
        Ok((data.true_state(t)? - est.get(t).unwrap()).norm_squared())
    };
    let lhs = err(tau)?;
    let rhs = c1 * cert.eta.powi((tau - t1) as i32) * err(t1)? + c2 * max_noise + c3 * performance;
    Ok(AccuracyBound { lhs, rhs, c1, c2, c3, performance, max_noise })
}

#[cfg(test)]
mod tests;
