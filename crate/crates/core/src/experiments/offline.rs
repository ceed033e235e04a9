use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{SchemeMetrics, SchemeOutcome};
use crate::analysis::{performance, sse};
use crate::error::Result;
use crate::estimators::{
    approximate_estimator, clairvoyant_fie, fixed_interval_smoother, kalman_filter, mhe, AeConfig, AeWindow,
};
use crate::linalg::{Matrix, Vector};
use crate::models::{batch_reactor, make_random_lti};
use crate::simulate::{simulate, split_seed, InputProfile, NoiseSpec, Overlay};
use crate::solver::SolverOptions;
use crate::types::{CostSpec, DataBatch, EstimateSequence};

fn outcome(
    scheme: String,
    sequence: EstimateSequence,
    perf: Option<f64>,
    data: &DataBatch,
    runtime: f64,
) -> Result<SchemeOutcome> {
    let sse = sse(&sequence, data, data.t0, data.t_end())?;
    Ok(SchemeOutcome {
        metrics: SchemeMetrics { scheme: scheme.clone(), sse, performance: perf, regret_per_step: None, runtime },
        scheme,
        sequence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReactorConfig {
    pub t_final: usize,
    pub x0: Vec<f64>,
    pub w_bound: f64,
    pub v_bound: f64,
    pub q: Vec<f64>,
    pub r: f64,
    pub horizons: Vec<usize>,
    /// Kept half-width of the approximate estimator (0 keeps window midpoints).
    pub delta: usize,
    pub run_mhe: bool,
    pub solver: SolverOptions,
}

impl Default for ReactorConfig {
    fn default() -> Self {
        Self {
            t_final: 400,
            x0: vec![3.0, 0.0],
            w_bound: 0.05,
            v_bound: 0.5,
            q: vec![1.0, 1.0],
            r: 1.0,
            horizons: vec![40, 70, 100, 130, 160],
            delta: 0,
            run_mhe: true,
            solver: SolverOptions::default(),
        }
    }
}

impl ReactorConfig {
    pub fn cost(&self) -> Result<CostSpec> {
        CostSpec::diagonal(&self.q, &[self.r], &[self.r])
    }

    pub fn batch(&self, seed: u64) -> Result<DataBatch> {
        simulate(
            &batch_reactor(),
            &Vector::from_vec(self.x0.clone()),
            &InputProfile::reactor_default(),
            &NoiseSpec::uniform(vec![self.w_bound; 2], vec![self.v_bound]),
            self.t_final,
            seed,
        )
    }
}

#[derive(Debug, Clone)]
pub struct ReactorRun {
    pub batch: DataBatch,
    /// `full`, then `ae-N<n>` and `mhe-N<n>` per horizon.
    pub schemes: Vec<SchemeOutcome>,
}

impl ReactorRun {
    pub fn get(&self, scheme: &str) -> Option<&SchemeOutcome> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }
}

/// Full solution, approximate estimator and MHE on one reactor batch.
pub fn reactor_run(cfg: &ReactorConfig, seed: u64, workers: usize) -> Result<ReactorRun> {
    let model = batch_reactor();
    let cost = cfg.cost()?;
    let data = cfg.batch(seed)?;
    let (t0, t1) = (data.t0, data.t_end());
    let mut schemes = Vec::new();
    let clock = Instant::now();
    let full = clairvoyant_fie(&model, &data, &cost, &cfg.solver, None)?;
    let full_seq = EstimateSequence { label: "full".into(), ..full.sequence };
    let j = performance(&model, &full_seq, &data, &cost, t0, t1)?;
    schemes.push(outcome("full".into(), full_seq, Some(j), &data, clock.elapsed().as_secs_f64())?);
    for &n in &cfg.horizons {
        let clock = Instant::now();
        let ae = approximate_estimator(&model, &data, &cost, AeConfig { n, delta: cfg.delta }, workers, &cfg.solver, None)?;
        let j = performance(&model, &ae.sequence, &data, &cost, t0, t1)?;
        schemes.push(outcome(format!("ae-N{n}"), ae.sequence, Some(j), &data, clock.elapsed().as_secs_f64())?);
        if cfg.run_mhe {
            let clock = Instant::now();
            let seq = mhe(&model, &data, &cost, n, &cfg.solver)?;
            let j = performance(&model, &seq, &data, &cost, t0, t1)?;
            schemes.push(outcome(format!("mhe-N{n}"), seq, Some(j), &data, clock.elapsed().as_secs_f64())?);
        }
    }
    Ok(ReactorRun { batch: data, schemes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LtiConfig {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// System seed; derived from the run seed when absent.
    pub model_seed: Option<u64>,
    pub t_final: usize,
    pub horizon: usize,
    pub delta: usize,
    pub input_amplitude: f64,
    pub input_period: f64,
    pub w_bound: f64,
    pub w_amplitude: f64,
    pub w_period: f64,
    pub v_bound: f64,
    pub run_full: bool,
}

impl Default for LtiConfig {
    fn default() -> Self {
        Self {
            n: 8,
            m: 30,
            p: 3,
            model_seed: None,
            t_final: 1200,
            horizon: 150,
            delta: 70,
            input_amplitude: 1.0,
            input_period: 100.0,
            w_bound: 0.05,
            w_amplitude: 0.1,
            w_period: 500.0,
            v_bound: 0.1,
            run_full: true,
        }
    }
}

impl LtiConfig {
    pub fn model_seed(&self, seed: u64) -> u64 {
        self.model_seed.unwrap_or_else(|| rand::RngCore::next_u64(&mut split_seed(seed, "model")))
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            w_overlay: Some(Overlay::sinusoid(self.n, self.w_amplitude, std::f64::consts::TAU / self.w_period)),
            ..NoiseSpec::uniform(vec![self.w_bound; self.n], vec![self.v_bound; self.p])
        }
    }
}

#[derive(Debug, Clone)]
pub struct LtiRun {
    pub batch: DataBatch,
    pub windows: Vec<AeWindow>,
    /// `full` (when enabled), `ae`, `fis`, `kf`.
    pub schemes: Vec<SchemeOutcome>,
}

impl LtiRun {
    pub fn get(&self, scheme: &str) -> Option<&SchemeOutcome> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }
}

/// Full solution, approximate estimator, Kalman filter and smoother on a
/// random stable LTI system.
pub fn lti_run(cfg: &LtiConfig, seed: u64, workers: usize) -> Result<LtiRun> {
    let model = make_random_lti(cfg.n, cfg.m, cfg.p, cfg.model_seed(seed));
    let profile = InputProfile::Sinusoid { amplitude: cfg.input_amplitude, period: cfg.input_period, offset: vec![] };
    let data = simulate(&model, &Vector::zeros(cfg.n), &profile, &cfg.noise(), cfg.t_final, seed)?;
    let cost = CostSpec::identity(cfg.n, cfg.p);
    let opts = SolverOptions::default();
    let (t0, t1) = (data.t0, data.t_end());
    let mut schemes = Vec::new();
    if cfg.run_full {
        let clock = Instant::now();
        let full = clairvoyant_fie(&model, &data, &cost, &opts, None)?;
        let seq = EstimateSequence { label: "full".into(), ..full.sequence };
        let j = performance(&model, &seq, &data, &cost, t0, t1)?;
        schemes.push(outcome("full".into(), seq, Some(j), &data, clock.elapsed().as_secs_f64())?);
    }
    let clock = Instant::now();
    let ae = approximate_estimator(&model, &data, &cost, AeConfig { n: cfg.horizon, delta: cfg.delta }, workers, &opts, None)?;
    let runtime = clock.elapsed().as_secs_f64();
    let j = performance(&model, &ae.sequence, &data, &cost, t0, t1)?;
    let windows = ae.windows.clone();
    schemes.push(outcome("ae".into(), ae.sequence, Some(j), &data, runtime)?);
    // Kalman baselines with covariances Q⁻¹, R⁻¹ and a random initial estimate
    let x0 = draw_normal(seed, "kf", cfg.n);
    let (qcov, rcov, p0) = (Matrix::identity(cfg.n, cfg.n), Matrix::identity(cfg.p, cfg.p), Matrix::identity(cfg.n, cfg.n));
    let clock = Instant::now();
    let fis = fixed_interval_smoother(&model, &data, &qcov, &rcov, &x0, &p0)?;
    let runtime = clock.elapsed().as_secs_f64();
    let j = performance(&model, &fis, &data, &cost, t0, t1)?;
    schemes.push(outcome("fis".into(), fis, Some(j), &data, runtime)?);
    let clock = Instant::now();
    let kf = kalman_filter(&model, &data, &qcov, &rcov, &x0, &p0)?;
    let runtime = clock.elapsed().as_secs_f64();
    let j = performance(&model, &kf, &data, &cost, t0, t1)?;
    schemes.push(outcome("kf".into(), kf, Some(j), &data, runtime)?);
    Ok(LtiRun { batch: data, windows, schemes })
}

fn draw_normal(seed: u64, label: &str, n: usize) -> Vector {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = split_seed(seed, label);
    Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
}
