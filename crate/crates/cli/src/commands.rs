//! The single-stage commands: simulate, estimate, analyze.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use turnpike_core::analysis::{deviation_series, performance, regret, sse};
use turnpike_core::estimators::{
    approximate_estimator, clairvoyant_fie, delayed_mhe, fie, fixed_interval_smoother, kalman_filter, mhe, run_online,
    AeConfig, OnlineConfig, PriorConfig, PriorKind, WeightUpdate,
};
use turnpike_core::io::{batch_digest, read_batch, read_estimates, write_batch, write_estimates};
use turnpike_core::linalg::spd_inverse;
use turnpike_core::models::model_by_id;
use turnpike_core::simulate::{simulate, InputProfile};
use turnpike_core::{DataBatch, EstimateSequence, Matrix, Vector};

use crate::config::{model_defaults, ConfigFile};
use crate::error::{CliError, Result};

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub model: String,
    pub profile: Option<String>,
    pub t_final: usize,
    pub seed: u64,
    pub out: PathBuf,
}

/// Simulates a batch and writes it as CSV plus manifest; returns the batch.
pub fn simulate_cmd(args: &SimulateArgs, config: &ConfigFile) -> Result<DataBatch> {
    let model = model_by_id(&args.model)?;
    let defaults = model_defaults(&model);
    let s = &config.simulate;
    let profile = match (&s.profile, &args.profile) {
        (Some(p), _) => p.clone(),
        (None, Some(name)) => InputProfile::by_name(name, &model)?,
        (None, None) => defaults.profile.clone(),
    };
    let x0 = Vector::from_vec(s.x0.clone().unwrap_or(defaults.x0.clone()));
    let noise = s.noise.clone().unwrap_or(defaults.noise.clone());
    let batch = simulate(&model, &x0, &profile, &noise, args.t_final, args.seed)?;
    ensure_parent(&args.out)?;
    write_batch(&args.out, &batch)?;
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Fie,
    Mhe,
    Dmhe,
    MhePrior,
    Ihe,
    Ae,
    Kf,
    Fis,
}

impl Scheme {
    pub fn by_name(name: &str) -> Result<Self> {
        serde_json::from_value(json!(name)).map_err(|_| invalid(format!("unknown scheme `{name}`")))
    }
}

#[derive(Debug, Clone)]
pub struct EstimateArgs {
    pub input: PathBuf,
    pub scheme: Scheme,
    pub horizon: Option<usize>,
    pub delta: usize,
    pub prior: PriorKind,
    pub update: WeightUpdate,
    pub workers: usize,
    pub out: PathBuf,
}

fn diag_or(values: &Option<Vec<f64>>, n: usize, fallback: f64) -> Result<Matrix> {
    let v = values.clone().unwrap_or(vec![fallback; n]);
    if v.len() != n {
        return Err(invalid(format!("expected {n} diagonal entries, got {}", v.len())));
    }
    Ok(Matrix::from_diagonal(&Vector::from_vec(v)))
}

/// Runs one estimator on a stored batch and writes the estimate sequence.
pub fn estimate_cmd(args: &EstimateArgs, config: &ConfigFile) -> Result<EstimateSequence> {
    let data = read_batch(&args.input)?;
    let model = model_by_id(&data.meta.model)?;
    let defaults = model_defaults(&model);
    let s = &config.estimate;
    let cost = s.cost(&defaults)?;
    let opts = s.solver.clone().unwrap_or_default();
    let n = args.horizon.unwrap_or(defaults.horizon);
    let dims = model.dims();
    let seq = match args.scheme {
        Scheme::Fie => fie(&model, &data, &cost, &opts)?,
        Scheme::Mhe => mhe(&model, &data, &cost, n, &opts)?,
        Scheme::Dmhe => delayed_mhe(&model, &data, &cost, n, args.delta, &opts)?,
        Scheme::MhePrior => {
            let mean = Vector::from_vec(s.prior_mean.clone().unwrap_or(defaults.x0.clone()));
            let w0 = s.w0.unwrap_or(defaults.w0);
            let prior = PriorConfig { kind: args.prior, mean, weight: Matrix::identity(dims.n, dims.n) * w0, update: args.update };
            let cfg = OnlineConfig { prior: Some(prior), solver: opts.clone(), ..OnlineConfig::new(Some(n), vec![args.delta]) };
            run_online(&model, &data, &cost, &cfg)?.estimates.remove(0)
        }
        Scheme::Ihe => clairvoyant_fie(&model, &data, &cost, &opts, None)?.sequence,
        Scheme::Ae => {
            approximate_estimator(&model, &data, &cost, AeConfig { n, delta: args.delta }, args.workers, &opts, None)?.sequence
        }
        Scheme::Kf | Scheme::Fis => {
            let inv = |m: &Matrix, what: &str| spd_inverse(m).ok_or_else(|| invalid(format!("{what} is not positive definite")));
            let qcov = inv(cost.q(), "Q")?;
            let rcov = inv(cost.r(), "R")?;
            let x0 = Vector::from_vec(s.x0.clone().unwrap_or(defaults.x0.clone()));
            let p0 = diag_or(&s.p0, dims.n, 1.0)?;
            if args.scheme == Scheme::Kf {
                kalman_filter(&model, &data, &qcov, &rcov, &x0, &p0)?
            } else {
                fixed_interval_smoother(&model, &data, &qcov, &rcov, &x0, &p0)?
            }
        }
    };
    let info = json!({
        "scheme": args.scheme,
        "horizon": n,
        "delta": args.delta,
        "prior": args.prior,
        "weight_update": args.update,
        "cost": cost.record(),
        "solver": opts,
        "truth_digest": batch_digest(&data),
    });
    ensure_parent(&args.out)?;
    write_estimates(&args.out, &seq, info)?;
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Sse,
    Perf,
    Regret,
    Turnpike,
}

impl Metric {
    pub fn by_name(name: &str) -> Result<Self> {
        serde_json::from_value(json!(name)).map_err(|_| invalid(format!("unknown metric `{name}`")))
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzeArgs {
    pub estimates: Vec<PathBuf>,
    pub truth: PathBuf,
    pub benchmark: Option<PathBuf>,
    pub metrics: Vec<Metric>,
    pub out: PathBuf,
}

/// One row per estimate file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisRow {
    pub label: String,
    pub t1: i64,
    pub t2: i64,
    pub sse: Option<f64>,
    pub performance: Option<f64>,
    pub regret: Option<f64>,
    pub regret_per_step: Option<f64>,
}

/// Evaluates estimate files against a batch with ground truth over their
/// common time range and writes one CSV per metric.
pub fn analyze_cmd(args: &AnalyzeArgs) -> Result<Vec<AnalysisRow>> {
    if args.estimates.is_empty() {
        return Err(invalid("no estimate files given"));
    }
    let data = read_batch(&args.truth)?;
    let model = model_by_id(&data.meta.model)?;
    let defaults = model_defaults(&model);
    let mut seqs = Vec::new();
    let mut cost = None;
    for path in &args.estimates {
        let (seq, manifest) = read_estimates(path)?;
        if let Some(d) = manifest.info.get("truth_digest").and_then(|v| v.as_str()) {
            if d != batch_digest(&data) {
                return Err(invalid(format!("{} was computed on a different batch", path.display())));
            }
        }
        if cost.is_none() {
            cost = manifest.info.get("cost").and_then(|c| serde_json::from_value(c.clone()).ok());
        }
        let label = path.file_stem().map_or(seq.label.clone(), |s| s.to_string_lossy().into_owned());
        seqs.push((label, seq));
    }
    let cost = match cost {
        Some(rec) => turnpike_core::CostSpec::from_record(&rec)?,
        None => turnpike_core::CostSpec::diagonal(&defaults.q, &defaults.r, &defaults.r)?,
    };
    let bench = match &args.benchmark {
        Some(p) => Some(read_estimates(p)?.0),
        None => None,
    };
    let needs_bench = args.metrics.iter().any(|m| matches!(m, Metric::Regret | Metric::Turnpike));
    if needs_bench && bench.is_none() {
        return Err(invalid("regret and turnpike metrics need --benchmark"));
    }
    let mut t1 = seqs.iter().map(|(_, s)| s.start).max().unwrap().max(data.t0);
    let mut t2 = seqs.iter().map(|(_, s)| s.end()).min().unwrap().min(data.t_end());
    if let Some(b) = &bench {
        t1 = t1.max(b.start);
        t2 = t2.min(b.end());
    }
    if t2 < t1 {
        return Err(invalid("estimates have no common time range"));
    }
    fs::create_dir_all(&args.out)?;
    let has = |m| args.metrics.contains(&m);
    let mut rows = Vec::new();
    for (label, seq) in &seqs {
        let mut row =
            AnalysisRow { label: label.clone(), t1, t2, sse: None, performance: None, regret: None, regret_per_step: None };
        if has(Metric::Sse) {
            row.sse = Some(sse(seq, &data, t1, t2)?);
        }
        if has(Metric::Perf) {
            row.performance = Some(performance(&model, seq, &data, &cost, t1, t2)?);
        }
        if let (true, Some(b)) = (has(Metric::Regret), &bench) {
            let r = regret(&model, seq, b, &data, &cost, t1, t2)?;
            row.regret = Some(r);
            row.regret_per_step = Some(r / (t2 - t1).max(1) as f64);
        }
        rows.push(row);
    }
    let write = |name: &str, pick: &dyn Fn(&AnalysisRow) -> Option<f64>| -> Result<()> {
        let mut w = csv::Writer::from_path(args.out.join(name))?;
        w.write_record(["label", "t1", "t2", "value"])?;
        for r in &rows {
            if let Some(v) = pick(r) {
                w.write_record([r.label.clone(), r.t1.to_string(), r.t2.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    if has(Metric::Sse) {
        write("sse.csv", &|r| r.sse)?;
    }
    if has(Metric::Perf) {
        write("performance.csv", &|r| r.performance)?;
    }
    if has(Metric::Regret) {
        write("regret.csv", &|r| r.regret_per_step)?;
    }
    if let (true, Some(b)) = (has(Metric::Turnpike), &bench) {
        // deviation from the benchmark over time, one column per estimate
        let series: Vec<Vec<f64>> =
            seqs.iter().map(|(_, s)| deviation_series(s, b, t1, t2)).collect::<turnpike_core::Result<_>>()?;
        let mut w = csv::Writer::from_path(args.out.join("deviation.csv"))?;
        let mut header = vec!["t".to_string()];
        header.extend(seqs.iter().map(|(l, _)| l.clone()));
        w.write_record(&header)?;
        for (k, t) in (t1..=t2).enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(series.iter().map(|s| s[k].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(rows)
}
