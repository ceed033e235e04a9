use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{draw_box, SchemeMetrics, SchemeOutcome};
use crate::analysis::{performance, sse, turnpike_profile, TurnpikeProfile};
use crate::error::Result;
use crate::estimators::{
    clairvoyant_fie, run_online, warm_start_from, Benchmark, OnlineConfig, PriorConfig, PriorKind, PriorRecord,
    WeightUpdate,
};
use crate::linalg::{Matrix, Vector};
use crate::models::model_by_id;
use crate::simulate::{simulate, InputProfile, NoiseSpec};
use crate::solver::SolverOptions;
use crate::types::{CostSpec, DataBatch, HorizonSolution};

/// How the initial prior mean `x̄_0` is drawn per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSampling {
    /// Uniform within `±spread·|x0_i|` around the true initial state.
    Relative { spread: f64 },
    /// Uniform on `center ± half`.
    Box { center: Vec<f64>, half: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineStudyConfig {
    pub model: String,
    pub t_final: usize,
    pub x0: Vec<f64>,
    pub profile: InputProfile,
    pub noise: NoiseSpec,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub horizon: usize,
    /// `W_0 = w0·I`.
    pub w0: f64,
    pub update: WeightUpdate,
    pub priors: Vec<PriorKind>,
    pub delays: Vec<usize>,
    pub prior_sampling: PriorSampling,
    /// Window end times whose solutions enter the turnpike profile.
    pub profile_range: Option<(i64, i64)>,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl OnlineStudyConfig {
    pub fn cstr() -> Self {
        Self {
            model: "cstr".into(),
            t_final: 200,
            x0: vec![0.8, 295.0, 0.7],
            profile: InputProfile::cstr_default(),
            noise: NoiseSpec::uniform(vec![5e-3, 1.0, 5e-3], vec![3.0]),
            q: vec![1e3, 1.0, 1e5],
            r: vec![1.0],
            horizon: 10,
            w0: 1e-2,
            update: WeightUpdate::Ekf,
            priors: vec![PriorKind::Filtering, PriorKind::Smoothing, PriorKind::Turnpike],
            delays: vec![0, 1, 5],
            prior_sampling: PriorSampling::Relative { spread: 0.25 },
            profile_range: Some((130, 180)),
            solver: SolverOptions::default(),
        }
    }

    /// Desk-scale quadrotor study (`T = 200`).
    pub fn quadrotor() -> Self {
        let pi16 = std::f64::consts::PI / 16.0;
        let mut q = vec![1e2; 3];
        q.extend([1e4; 3]);
        q.extend([1e3; 3]);
        q.extend([1e5; 3]);
        let mut half = vec![1.0; 3];
        half.extend([pi16; 3]);
        half.extend([0.0; 6]);
        let mut w = vec![2e-2; 3];
        w.extend([2e-5; 3]);
        w.extend([2e-3; 3]);
        w.extend([2e-6; 3]);
        Self {
            model: "quadrotor".into(),
            t_final: 200,
            x0: vec![0.0; 12],
            profile: InputProfile::spiral_default(),
            noise: NoiseSpec::uniform(w, vec![0.2, 0.2, 0.2, 5e-2, 5e-2, 5e-2]),
            q,
            r: vec![10.0, 10.0, 10.0, 100.0, 100.0, 100.0],
            horizon: 30,
            w0: 10.0,
            update: WeightUpdate::Ekf,
            priors: vec![PriorKind::Filtering, PriorKind::Smoothing, PriorKind::Turnpike],
            delays: vec![0, 1, 3, 15],
            prior_sampling: PriorSampling::Box { center: vec![0.0; 12], half },
            profile_range: None,
            solver: SolverOptions::default(),
        }
    }

    pub fn cost(&self) -> Result<CostSpec> {
        CostSpec::diagonal(&self.q, &self.r, &self.r)
    }

    pub fn prior_mean(&self, seed: u64) -> Vector {
        match &self.prior_sampling {
            PriorSampling::Relative { spread } => {
                let half: Vec<f64> = self.x0.iter().map(|x| spread * x.abs()).collect();
                draw_box(seed, "prior", &self.x0, &half)
            }
            PriorSampling::Box { center, half } => draw_box(seed, "prior", center, half),
        }
    }

    pub fn max_delay(&self) -> usize {
        self.delays.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct OnlineStudy {
    pub batch: DataBatch,
    pub prior_mean: Vector,
    pub benchmark: Benchmark,
    /// `<prior>-d<δ>` per prior and delay, then `ihe`. SSE, performance and
    /// regret use the range `[0, T − max δ]`.
    pub schemes: Vec<SchemeOutcome>,
    /// Prior records of each prior scheme.
    pub priors: Vec<(PriorKind, Vec<PriorRecord>)>,
    /// Deviation profiles of the windows ending in `profile_range`.
    pub profiles: Vec<(PriorKind, TurnpikeProfile)>,
    pub horizon: usize,
}

impl OnlineStudy {
    pub fn get(&self, scheme: &str) -> Option<&SchemeOutcome> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }

    pub fn sse(&self, scheme: &str) -> f64 {
        self.get(scheme).map_or(f64::NAN, |s| s.metrics.sse)
    }

    /// Mean distance of the prior means `x̄_s` from the benchmark over the
    /// first and the last quarter of the window starts.
    pub fn prior_contraction(&self, kind: PriorKind) -> Option<(f64, f64)> {
        let (_, records) = self.priors.iter().find(|(k, _)| *k == kind)?;
        let dist: Vec<f64> = records
            .iter()
            .filter(|r| r.t - r.start >= self.horizon as i64)
            .filter_map(|r| self.benchmark.sequence.get(r.start).map(|x| (&r.mean - x).norm()))
            .collect();
        let q = dist.len() / 4;
        if q == 0 {
            return None;
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Some((mean(&dist[..q]), mean(&dist[dist.len() - q..])))
    }
}

pub fn scheme_name(kind: PriorKind, delay: usize) -> String {
    format!("{}-d{delay}", kind.as_str())
}

/// Runs every configured prior with all delays on one simulated batch and
/// compares against the clairvoyant benchmark.
pub fn online_study(cfg: &OnlineStudyConfig, seed: u64) -> Result<OnlineStudy> {
    let model = model_by_id(&cfg.model)?;
    let data = simulate(&model, &Vector::from_vec(cfg.x0.clone()), &cfg.profile, &cfg.noise, cfg.t_final, seed)?;
    let cost = cfg.cost()?;
    let prior_mean = cfg.prior_mean(seed);
    let n = model.dims().n;
    let keep = cfg.profile_range.is_some();
    let mut runs = Vec::new();
    for &kind in &cfg.priors {
        let config = OnlineConfig {
            prior: Some(PriorConfig {
                kind,
                mean: prior_mean.clone(),
                weight: Matrix::identity(n, n) * cfg.w0,
                update: cfg.update,
            }),
            solver: cfg.solver.clone(),
            keep_solutions: keep,
            ..OnlineConfig::new(Some(cfg.horizon), cfg.delays.clone())
        };
        let clock = Instant::now();
        let run = run_online(&model, &data, &cost, &config)?;
        runs.push((kind, run, clock.elapsed().as_secs_f64()));
    }
    let clock = Instant::now();
    let warm = match runs.first().and_then(|(_, r, _)| r.estimates.iter().find(|e| e.delay == 0)) {
        Some(seq) => Some(warm_start_from(&model, seq, &data.inputs, data.t0, data.t_end())?),
        None => None,
    };
    let benchmark = clairvoyant_fie(&model, &data, &cost, &cfg.solver, warm.as_ref())?;
    let ihe_time = clock.elapsed().as_secs_f64();
    let (t1, t2) = (data.t0, data.t_end() - cfg.max_delay() as i64);
    let bench_j = performance(&model, &benchmark.sequence, &data, &cost, t1, t2)?;
    let steps = (t2 - t1).max(1) as f64;
    let evaluate = |scheme: String, seq: &crate::types::EstimateSequence, runtime: f64| -> Result<SchemeOutcome> {
        let j = performance(&model, seq, &data, &cost, t1, t2)?;
        Ok(SchemeOutcome {
            metrics: SchemeMetrics {
                scheme: scheme.clone(),
                sse: sse(seq, &data, t1, t2)?,
                performance: Some(j),
                regret_per_step: Some((j - bench_j) / steps),
                runtime,
            },
            scheme,
            sequence: seq.clone(),
        })
    };
    let mut schemes = Vec::new();
    let mut priors = Vec::new();
    let mut profiles = Vec::new();
    for (kind, run, runtime) in runs {
        for seq in &run.estimates {
            schemes.push(evaluate(scheme_name(kind, seq.delay), seq, runtime)?);
        }
        if let Some((a, b)) = cfg.profile_range {
            let windows: Vec<HorizonSolution> = run.solutions.into_iter().filter(|s| (a..=b).contains(&s.end())).collect();
            profiles.push((kind, turnpike_profile(&windows, &benchmark.sequence, crate::analysis::default_epsilon(&data))?));
        }
        priors.push((kind, run.priors));
    }
    schemes.push(evaluate("ihe".into(), &benchmark.sequence, ihe_time)?);
    Ok(OnlineStudy { batch: data, prior_mean, benchmark, schemes, priors, profiles, horizon: cfg.horizon })
}
