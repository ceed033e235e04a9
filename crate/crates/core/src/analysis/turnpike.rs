use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DataBatch, EstimateSequence, HorizonSolution};

/// Deviations below this are treated as exact agreement by the envelope fit.
const FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcSummary {
    pub start: i64,
    pub horizon: usize,
    /// First offset whose state deviation is below ε.
    pub first_below: Option<usize>,
    /// Last offset whose state deviation is below ε.
    pub last_below: Option<usize>,
    pub midpoint: f64,
}

impl ArcSummary {
    pub fn approach_len(&self) -> Option<usize> {
        self.first_below
    }

    pub fn leave_len(&self) -> Option<usize> {
        self.last_below.map(|j| self.horizon - j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub k: f64,
    pub lambda: f64,
    /// `‖dev − K λ^d‖` over the fitted points.
    pub residual: f64,
    /// Residual relative to the norm of the fitted deviations.
    pub relative_residual: f64,
    pub points: usize,
    pub ok: bool,
}

/// Deviations of window solutions from the benchmark, one row per window,
/// indexed by offset within the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnpikeProfile {
    pub horizon: usize,
    pub epsilon: f64,
    pub starts: Vec<i64>,
    pub state: Vec<Vec<f64>>,
    /// `|(x̂, ŵ) − (x^∞, w^∞)|`; the last offset carries the state part only.
    pub full: Option<Vec<Vec<f64>>>,
    pub summaries: Vec<ArcSummary>,
    pub envelope: Option<Envelope>,
}

/// `1e-3` times the median output norm.
pub fn default_epsilon(data: &DataBatch) -> f64 {
    let mut norms: Vec<f64> = data.outputs.iter().map(|y| y.norm()).collect();
    if norms.is_empty() {
        return 1e-3;
    }
    norms.sort_by(f64::total_cmp);
    let m = norms.len();
    let median = if m % 2 == 1 { norms[m / 2] } else { 0.5 * (norms[m / 2 - 1] + norms[m / 2]) };
    1e-3 * median
}

pub fn turnpike_profile(windows: &[HorizonSolution], benchmark: &EstimateSequence, epsilon: f64) -> Result<TurnpikeProfile> {
    let bw = benchmark.disturbances.as_ref();
    let mut state = Vec::with_capacity(windows.len());
    let mut full = bw.map(|_| Vec::with_capacity(windows.len()));
    let mut summaries = Vec::with_capacity(windows.len());
    let mut horizon = 0;
    for sol in windows {
        if !benchmark.covers(sol.start, sol.end()) {
            return Err(Error::OutOfRange(sol.end()));
        }
        let n = sol.horizon();
        horizon = horizon.max(n);
        let off = (sol.start - benchmark.start) as usize;
        let dev: Vec<f64> = sol.xs.iter().enumerate().map(|(j, x)| (x - &benchmark.states[off + j]).norm()).collect();
        if let (Some(full), Some(bw)) = (full.as_mut(), bw) {
            let row: Vec<f64> = dev
                .iter()
                .enumerate()
                .map(|(j, dx)| match (sol.ws.get(j), bw.get(off + j)) {
                    (Some(w), Some(wb)) => (dx * dx + (w - wb).norm_squared()).sqrt(),
                    _ => *dx,
                })
                .collect();
            full.push(row);
        }
        let below: Vec<usize> = (0..dev.len()).filter(|&j| dev[j] < epsilon).collect();
        summaries.push(ArcSummary {
            start: sol.start,
            horizon: n,
            first_below: below.first().copied(),
            last_below: below.last().copied(),
            midpoint: dev[n / 2],
        });
        state.push(dev);
    }
    Ok(TurnpikeProfile { horizon, epsilon, starts: windows.iter().map(|s| s.start).collect(), state, full, summaries, envelope: None })
}

/// Least-squares fit of `log dev ≈ log K + d log λ` over `(d, dev)` points.
pub fn fit_envelope_points(points: &[(f64, f64)]) -> Envelope {
    let pts: Vec<(f64, f64)> = points.iter().copied().filter(|&(_, v)| v > FLOOR).collect();
    let failed = Envelope { k: f64::NAN, lambda: f64::NAN, residual: f64::NAN, relative_residual: f64::NAN, points: pts.len(), ok: false };
    let m = pts.len() as f64;
    if pts.len() < 2 {
        return failed;
    }
    let md = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ml = pts.iter().map(|p| p.1.ln()).sum::<f64>() / m;
    let sdd: f64 = pts.iter().map(|p| (p.0 - md).powi(2)).sum();
    if sdd == 0.0 {
        return failed;
    }
    let sdl: f64 = pts.iter().map(|p| (p.0 - md) * (p.1.ln() - ml)).sum();
    let slope = sdl / sdd;
    let k = (ml - slope * md).exp();
    let lambda = slope.exp();
    let residual = pts.iter().map(|&(d, v)| (v - k * lambda.powf(d)).powi(2)).sum::<f64>().sqrt();
    let norm = pts.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
    Envelope { k, lambda, residual, relative_residual: residual / norm, points: pts.len(), ok: lambda > 0.0 && lambda < 1.0 }
}

/// Fits `K λ^{min(j, N_w − j)}` to all state deviations of the profile and
/// stores the result in it.
pub fn fit_exponential_envelope(profile: &mut TurnpikeProfile) -> Envelope {
    let points: Vec<(f64, f64)> = profile
        .state
        .iter()
        .flat_map(|row| {
            let n = row.len() - 1;
            row.iter().enumerate().map(move |(j, &v)| (j.min(n - j) as f64, v))
        })
        .collect();
    let env = fit_envelope_points(&points);
    profile.envelope = Some(env);
    env
}
