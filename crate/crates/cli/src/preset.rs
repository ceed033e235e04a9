//! Experiment presets, the full-pipeline runner and manifest comparison.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use turnpike_core::estimators::PriorRecord;
use turnpike_core::experiments::{
    lti_run, median, motivating_study, online_study, quantile, reactor_run, scalar_example_data, LtiConfig,
    OnlineStudyConfig, ReactorConfig, ScalarConfig, SchemeMetrics, SchemeOutcome,
};
use turnpike_core::analysis::TurnpikeProfile;
use turnpike_core::io::{digest, write_batch, write_estimates};
use turnpike_core::DataBatch;

use crate::error::{CliError, Result};
use crate::config::with_overrides;

pub const PRESETS: [&str; 5] = ["motivating-scalar", "batch-reactor", "lti-offline", "cstr-online", "quadrotor-online"];

/// Parameters of one preset. Defaults are the full study settings except for
/// desk-scale reductions (quadrotor `T = 200`, LTI `n = 8`).
#[derive(Debug, Clone, PartialEq)]
pub enum PresetParams {
    MotivatingScalar(ScalarConfig),
    BatchReactor(ReactorConfig),
    LtiOffline(LtiConfig),
    CstrOnline(OnlineStudyConfig),
    QuadrotorOnline(OnlineStudyConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: String,
    pub seeds: Vec<u64>,
    pub params: PresetParams,
}

impl ExperimentPreset {
    pub fn by_name(name: &str) -> Result<Self> {
        let (params, seeds): (PresetParams, Vec<u64>) = match name {
            "motivating-scalar" => (PresetParams::MotivatingScalar(ScalarConfig::default()), vec![0]),
            "batch-reactor" => (PresetParams::BatchReactor(ReactorConfig::default()), (0..10).collect()),
            "lti-offline" => (PresetParams::LtiOffline(LtiConfig::default()), (0..5).collect()),
            "cstr-online" => (PresetParams::CstrOnline(OnlineStudyConfig::cstr()), (0..20).collect()),
            "quadrotor-online" => (PresetParams::QuadrotorOnline(OnlineStudyConfig::quadrotor()), (0..10).collect()),
            other => {
                return Err(CliError::Validation(format!("unknown preset `{other}` (known: {})", PRESETS.join(", "))))
            }
        };
        Ok(Self { name: name.to_string(), seeds, params })
    }

    /// Applies parameter overrides and an explicit seed list.
    pub fn configure(mut self, overrides: Option<&toml::Table>, seeds: Option<Vec<u64>>) -> Result<Self> {
        self.params = match &self.params {
            PresetParams::MotivatingScalar(c) => PresetParams::MotivatingScalar(with_overrides(c, overrides)?),
            PresetParams::BatchReactor(c) => PresetParams::BatchReactor(with_overrides(c, overrides)?),
            PresetParams::LtiOffline(c) => PresetParams::LtiOffline(with_overrides(c, overrides)?),
            PresetParams::CstrOnline(c) => PresetParams::CstrOnline(with_overrides(c, overrides)?),
            PresetParams::QuadrotorOnline(c) => PresetParams::QuadrotorOnline(with_overrides(c, overrides)?),
        };
        if let Some(s) = seeds {
            if s.is_empty() {
                return Err(CliError::Validation("seed list is empty".into()));
            }
            self.seeds = s;
        }
        Ok(self)
    }

    pub fn params_json(&self) -> Value {
        let v = match &self.params {
            PresetParams::MotivatingScalar(c) => serde_json::to_value(c),
            PresetParams::BatchReactor(c) => serde_json::to_value(c),
            PresetParams::LtiOffline(c) => serde_json::to_value(c),
            PresetParams::CstrOnline(c) | PresetParams::QuadrotorOnline(c) => serde_json::to_value(c),
        };
        v.unwrap_or(Value::Null)
    }

    /// Digest of everything that determines the results; the worker count
    /// is excluded since results do not depend on it.
    pub fn config_digest(&self) -> String {
        digest(&json!({ "preset": self.name, "params": self.params_json(), "seeds": self.seeds }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Option<Self> {
        (!values.is_empty()).then(|| Spread { median: median(values), q1: quantile(values, 0.25), q3: quantile(values, 0.75) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub runs: usize,
    pub sse: Option<Spread>,
    pub performance: Option<Spread>,
    pub regret_per_step: Option<Spread>,
}

/// Per-seed metrics without wall-clock times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scheme: String,
    pub sse: f64,
    pub performance: Option<f64>,
    pub regret_per_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub truth_digest: String,
    pub metrics: Vec<MetricRow>,
    /// Preset-specific diagnostics (arc lengths, prior contraction).
    #[serde(default)]
    pub extras: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub preset: String,
    pub params: Value,
    pub seeds: Vec<u64>,
    pub config_digest: String,
    pub runs: Vec<SeedRecord>,
    pub summary: Vec<SchemeSummary>,
    /// Output files relative to the run directory.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
        let text = fs::read_to_string(&path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn truth_digests(&self) -> BTreeMap<u64, &str> {
        self.runs.iter().map(|r| (r.seed, r.truth_digest.as_str())).collect()
    }
}

struct SeedOutput {
    record: SeedRecord,
    runtimes: Vec<(String, f64)>,
    artifacts: Vec<String>,
}

struct SeedWriter<'a> {
    root: &'a Path,
    dir: String,
    artifacts: Vec<String>,
}

impl SeedWriter<'_> {
    fn path(&mut self, name: &str) -> Result<PathBuf> {
        let rel = format!("{}/{name}", self.dir);
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.artifacts.push(rel);
        Ok(path)
    }

    fn batch(&mut self, batch: &DataBatch) -> Result<String> {
        let path = self.path("batch.csv")?;
        Ok(write_batch(&path, batch)?.digest)
    }

    fn schemes(&mut self, schemes: &[SchemeOutcome], truth: &str) -> Result<()> {
        for s in schemes {
            let path = self.path(&format!("estimates/{}.csv", s.scheme))?;
            write_estimates(&path, &s.sequence, json!({ "scheme": s.scheme, "truth_digest": truth }))?;
        }
        Ok(())
    }

    fn profile(&mut self, name: &str, profile: &TurnpikeProfile) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name)?)?;
        w.write_record(["window_start", "horizon", "offset", "t", "deviation"])?;
        for (start, dev) in profile.starts.iter().zip(&profile.state) {
            for (j, d) in dev.iter().enumerate() {
                w.write_record([
                    start.to_string(),
                    profile.horizon.to_string(),
                    j.to_string(),
                    (start + j as i64).to_string(),
                    d.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn priors(&mut self, name: &str, records: &[PriorRecord]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name)?)?;
        let n = records.first().map_or(0, |r| r.mean.len());
        let mut header = vec!["t".to_string(), "start".to_string()];
        header.extend((1..=n).map(|i| format!("xbar{i}")));
        w.write_record(&header)?;
        for r in records {
            let mut rec = vec![r.t.to_string(), r.start.to_string()];
            rec.extend(r.mean.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn rows(metrics: impl Iterator<Item = SchemeMetrics>) -> (Vec<MetricRow>, Vec<(String, f64)>) {
    metrics
        .map(|m| {
            let rt = (m.scheme.clone(), m.runtime);
            (MetricRow { scheme: m.scheme, sse: m.sse, performance: m.performance, regret_per_step: m.regret_per_step }, rt)
        })
        .unzip()
}

fn run_seed(preset: &ExperimentPreset, seed: u64, workers: usize, root: &Path) -> Result<SeedOutput> {
    let mut w = SeedWriter { root, dir: format!("seed-{seed}"), artifacts: Vec::new() };
    let (truth, metrics, runtimes, extras) = match &preset.params {
        PresetParams::MotivatingScalar(cfg) => {
            let study = motivating_study(cfg)?;
            let last = cfg.horizons.iter().copied().max().unwrap_or(0) as i64;
            let batch = scalar_example_data(0, last.max(cfg.t_final));
            let truth = w.batch(&batch)?;
            let path = w.path("estimates/ihe.csv")?;
            write_estimates(&path, &study.benchmark.sequence, json!({ "scheme": "ihe", "truth_digest": truth }))?;
            let mut metrics = Vec::new();
            let mut extras = Vec::new();
            for ((n, sol), (_, profile)) in study.windows.iter().zip(&study.profiles) {
                w.profile(&format!("profiles/N{n}.csv"), profile)?;
                let dev = &profile.state[0];
                metrics.push(MetricRow {
                    scheme: format!("window-N{n}"),
                    sse: dev.iter().map(|d| d * d).sum(),
                    performance: Some(sol.cost),
                    regret_per_step: None,
                });
                let s = &profile.summaries[0];
                extras.push(json!({
                    "horizon": n,
                    "epsilon": profile.epsilon,
                    "approach": s.approach_len(),
                    "leave": s.leave_len(),
                    "midpoint_deviation": s.midpoint,
                }));
            }
            (truth, metrics, Vec::new(), json!({ "arcs": extras }))
        }
        PresetParams::BatchReactor(cfg) => {
            let run = reactor_run(cfg, seed, workers)?;
            let truth = w.batch(&run.batch)?;
            w.schemes(&run.schemes, &truth)?;
            let (m, rt) = rows(run.schemes.into_iter().map(|s| s.metrics));
            (truth, m, rt, Value::Null)
        }
        PresetParams::LtiOffline(cfg) => {
            let run = lti_run(cfg, seed, workers)?;
            let truth = w.batch(&run.batch)?;
            w.schemes(&run.schemes, &truth)?;
            let windows = run.windows.len();
            let (m, rt) = rows(run.schemes.into_iter().map(|s| s.metrics));
            (truth, m, rt, json!({ "ae_windows": windows }))
        }
        PresetParams::CstrOnline(cfg) | PresetParams::QuadrotorOnline(cfg) => {
            let study = online_study(cfg, seed)?;
            let truth = w.batch(&study.batch)?;
            w.schemes(&study.schemes, &truth)?;
            let mut contraction = serde_json::Map::new();
            for (kind, records) in &study.priors {
                w.priors(&format!("priors/{}.csv", kind.as_str()), records)?;
                if let Some((first, last)) = study.prior_contraction(*kind) {
                    contraction.insert(kind.as_str().into(), json!({ "first_quarter": first, "final_quarter": last }));
                }
            }
            for (kind, profile) in &study.profiles {
                w.profile(&format!("profiles/{}.csv", kind.as_str()), profile)?;
            }
            let (m, rt) = rows(study.schemes.into_iter().map(|s| s.metrics));
            (truth, m, rt, json!({ "prior_contraction": contraction }))
        }
    };
    Ok(SeedOutput {
        record: SeedRecord { seed, truth_digest: truth, metrics, extras },
        runtimes,
        artifacts: w.artifacts,
    })
}

fn summarize(runs: &[SeedRecord]) -> Vec<SchemeSummary> {
    let mut order: Vec<String> = Vec::new();
    for r in runs {
        for m in &r.metrics {
            if !order.contains(&m.scheme) {
                order.push(m.scheme.clone());
            }
        }
    }
    order
        .into_iter()
        .map(|scheme| {
            let rows: Vec<&MetricRow> = runs.iter().flat_map(|r| &r.metrics).filter(|m| m.scheme == scheme).collect();
            let col = |f: &dyn Fn(&MetricRow) -> Option<f64>| Spread::of(&rows.iter().filter_map(|m| f(m)).collect::<Vec<_>>());
            SchemeSummary {
                runs: rows.len(),
                sse: col(&|m| Some(m.sse)),
                performance: col(&|m| m.performance),
                regret_per_step: col(&|m| m.regret_per_step),
                scheme,
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const PARTIAL: &str = ".partial";

/// Runs every seed of a preset, writing batches, estimates and metric
/// tables under `out_dir` plus `manifest.json`. Seeds run in parallel on
/// up to `workers` threads. On failure the directory keeps what was
/// written and a `.partial` marker naming the failed stage.
pub fn run_preset(preset: &ExperimentPreset, workers: usize, out_dir: &Path) -> Result<RunManifest> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::Validation(format!("cannot create {}: {e}", out_dir.display())))?;
    let marker = out_dir.join(PARTIAL);
    fs::write(&marker, format!("preset {} in progress\n", preset.name))?;
    let workers = workers.max(1);
    let threads = workers.min(preset.seeds.len()).max(1);
    let inner = (workers / threads).max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SeedOutput>>>> = Mutex::new((0..preset.seeds.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = preset.seeds.get(i) else { break };
                let out = run_seed(preset, seed, inner, out_dir).map_err(|e| e.context(format!("preset {} seed {seed}", preset.name)));
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    let mut runs = Vec::new();
    let mut runtimes = Vec::new();
    let mut artifacts = Vec::new();
    for out in slots.into_inner().unwrap() {
        match out.expect("every seed is processed") {
            Ok(o) => {
                runtimes.extend(o.runtimes.into_iter().map(|(s, t)| (o.record.seed, s, t)));
                artifacts.extend(o.artifacts);
                runs.push(o.record);
            }
            Err(e) => {
                fs::write(&marker, format!("{e}\n"))?;
                return Err(e);
            }
        }
    }
    let mut finish = || -> Result<RunManifest> {
        let mut w = csv::Writer::from_path(out_dir.join("metrics.csv"))?;
        w.write_record(["seed", "scheme", "sse", "performance", "regret_per_step"])?;
        for r in &runs {
            for m in &r.metrics {
                w.write_record([r.seed.to_string(), m.scheme.clone(), m.sse.to_string(), opt(m.performance), opt(m.regret_per_step)])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(out_dir.join("timing.csv"))?;
        w.write_record(["seed", "scheme", "seconds"])?;
        for (seed, scheme, t) in &runtimes {
            w.write_record([seed.to_string(), scheme.clone(), t.to_string()])?;
        }
        w.flush()?;
        artifacts.extend(["metrics.csv".to_string(), "timing.csv".to_string()]);
        let manifest = RunManifest {
            preset: preset.name.clone(),
            params: preset.params_json(),
            seeds: preset.seeds.clone(),
            config_digest: preset.config_digest(),
            summary: summarize(&runs),
            runs: runs.clone(),
            artifacts: artifacts.clone(),
        };
        fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    };
    match finish() {
        Ok(m) => {
            fs::remove_file(&marker)?;
            Ok(m)
        }
        Err(e) => {
            let e = e.context(format!("preset {} writing results", preset.name));
            fs::write(&marker, format!("{e}\n"))?;
            Err(e)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub run: String,
    pub scheme: String,
    pub runs: usize,
    pub sse: Option<Spread>,
    pub performance: Option<Spread>,
    pub regret_per_step: Option<Spread>,
    /// Median SSE minus the same scheme's median SSE in the first run.
    pub sse_diff: Option<f64>,
}

/// Aligns the scheme summaries of several runs of the same data. Runs are
/// labelled by `labels`. Fails when a seed shared by two runs has
/// different ground truth, or when the runs share no seed.
pub fn compare(manifests: &[RunManifest], labels: &[String]) -> Result<Vec<ComparisonRow>> {
    let Some(first) = manifests.first() else {
        return Err(CliError::Validation("nothing to compare".into()));
    };
    let base = first.truth_digests();
    for (m, label) in manifests.iter().zip(labels).skip(1) {
        let other = m.truth_digests();
        let shared: Vec<_> = base.keys().filter(|s| other.contains_key(s)).collect();
        if shared.is_empty() {
            return Err(CliError::Validation(format!("{label} shares no seed with {}", labels[0])));
        }
        if let Some(s) = shared.into_iter().find(|s| base[s] != other[s]) {
            return Err(CliError::Validation(format!("truth digest mismatch between {} and {label} at seed {s}", labels[0])));
        }
    }
    let base_median = |scheme: &str| first.summary.iter().find(|s| s.scheme == scheme).and_then(|s| s.sse).map(|s| s.median);
    let mut out = Vec::new();
    for (m, label) in manifests.iter().zip(labels) {
        for s in &m.summary {
            out.push(ComparisonRow {
                run: label.clone(),
                scheme: s.scheme.clone(),
                runs: s.runs,
                sse: s.sse,
                performance: s.performance,
                regret_per_step: s.regret_per_step,
                sse_diff: s.sse.zip(base_median(&s.scheme)).map(|(a, b)| a.median - b),
            });
        }
    }
    Ok(out)
}

pub fn write_comparison(rows: &[ComparisonRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "run", "scheme", "runs", "sse_median", "sse_q1", "sse_q3", "perf_median", "perf_q1", "perf_q3", "regret_median", "sse_diff",
    ])?;
    for r in rows {
        let s = |x: Option<Spread>, f: fn(Spread) -> f64| opt(x.map(f));
        w.write_record([
            r.run.clone(),
            r.scheme.clone(),
            r.runs.to_string(),
            s(r.sse, |x| x.median),
            s(r.sse, |x| x.q1),
            s(r.sse, |x| x.q3),
            s(r.performance, |x| x.median),
            s(r.performance, |x| x.q1),
            s(r.performance, |x| x.q3),
            s(r.regret_per_step, |x| x.median),
            opt(r.sse_diff),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves() {
        for name in PRESETS {
            let p = ExperimentPreset::by_name(name).unwrap();
            assert!(!p.seeds.is_empty());
        }
        assert!(ExperimentPreset::by_name("nope").is_err());
    }

    #[test]
    fn digest_tracks_parameters_not_workers() {
        let a = ExperimentPreset::by_name("batch-reactor").unwrap();
        let t: toml::Table = toml::from_str("t_final = 100").unwrap();
        let b = a.clone().configure(Some(&t), None).unwrap();
        let c = a.clone().configure(None, Some(vec![0, 1])).unwrap();
        assert_ne!(a.config_digest(), b.config_digest());
        assert_ne!(a.config_digest(), c.config_digest());
        assert_eq!(a.config_digest(), a.clone().configure(None, None).unwrap().config_digest());
    }

    #[test]
    fn desk_scale_defaults() {
        match ExperimentPreset::by_name("quadrotor-online").unwrap().params {
            PresetParams::QuadrotorOnline(c) => assert_eq!(c.t_final, 200),
            _ => unreachable!(),
        }
        match ExperimentPreset::by_name("lti-offline").unwrap().params {
            PresetParams::LtiOffline(c) => assert_eq!(c.n, 8),
            _ => unreachable!(),
        }
    }

    fn manifest(seed_digests: &[(u64, &str)], sse: f64) -> RunManifest {
        let runs: Vec<SeedRecord> = seed_digests
            .iter()
            .map(|(s, d)| SeedRecord {
                seed: *s,
                truth_digest: d.to_string(),
                metrics: vec![MetricRow { scheme: "a".into(), sse: sse + *s as f64, performance: None, regret_per_step: None }],
                extras: Value::Null,
            })
            .collect();
        RunManifest {
            preset: "p".into(),
            params: Value::Null,
            seeds: seed_digests.iter().map(|s| s.0).collect(),
            config_digest: String::new(),
            summary: summarize(&runs),
            runs,
            artifacts: vec![],
        }
    }

    #[test]
    fn single_manifest_compares_to_its_summary() {
        let m = manifest(&[(0, "x"), (1, "y"), (2, "z")], 1.0);
        let rows = compare(std::slice::from_ref(&m), &["m".into()]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].sse, m.summary[0].sse);
        assert_eq!(rows[0].sse.unwrap().median, 2.0);
        assert_eq!(rows[0].sse_diff, Some(0.0));
    }

    #[test]
    fn identical_runs_have_zero_difference() {
        let m = manifest(&[(0, "x"), (1, "y")], 3.0);
        let rows = compare(&[m.clone(), m], &["a".into(), "b".into()]).unwrap();
        assert!(rows.iter().all(|r| r.sse_diff == Some(0.0)));
    }

    #[test]
    fn mismatched_truth_is_rejected() {
        let a = manifest(&[(0, "x")], 1.0);
        let b = manifest(&[(0, "other")], 1.0);
        assert!(compare(&[a.clone(), b], &["a".into(), "b".into()]).is_err());
        let c = manifest(&[(5, "x")], 1.0);
        assert!(compare(&[a, c], &["a".into(), "c".into()]).is_err());
    }
}
