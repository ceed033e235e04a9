use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use turnpike_cli::commands::{
    analyze_cmd, estimate_cmd, simulate_cmd, AnalyzeArgs, EstimateArgs, Metric, Scheme, SimulateArgs,
};
use turnpike_cli::config::ConfigFile;
use turnpike_cli::preset::{compare, run_preset, write_comparison, ExperimentPreset, RunManifest, PRESETS};
use turnpike_cli::{CliError, Result};
use turnpike_core::estimators::{PriorKind, WeightUpdate};

#[derive(Parser)]
#[command(name = "turnpike", version, about = "Moving horizon estimation with turnpike diagnostics")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for approximate-estimator windows and preset seeds.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML config file with overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a data batch.
    Simulate {
        #[arg(long)]
        model: String,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long = "T")]
        t_final: usize,
    },
    /// Run one estimator on a data batch.
    Estimate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = parse_scheme)]
        scheme: Scheme,
        #[arg(long = "N")]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 0)]
        delta: usize,
        #[arg(long, default_value = "turnpike", value_parser = parse_prior)]
        prior: PriorKind,
        #[arg(long = "weight-update", default_value = "ekf", value_parser = parse_update)]
        weight_update: WeightUpdate,
    },
    /// Compute metrics of estimate files against ground truth.
    Analyze {
        #[arg(long, num_args = 1.., required = true)]
        estimates: Vec<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        benchmark: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "sse,perf", value_parser = parse_metric)]
        metrics: Vec<Metric>,
    },
    /// Experiment presets.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Compare run manifests (files or run directories).
    Compare {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// Run a preset end to end.
    Run {
        name: String,
        /// Comma-separated seed list; overrides the preset and config seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// List preset names.
    List,
    /// Print a preset's parameters (after config overrides) as JSON.
    Show { name: String },
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    Scheme::by_name(s).map_err(|e| e.to_string())
}

fn parse_prior(s: &str) -> Result<PriorKind, String> {
    PriorKind::by_name(s).map_err(|e| e.to_string())
}

fn parse_update(s: &str) -> Result<WeightUpdate, String> {
    match s {
        "constant" => Ok(WeightUpdate::Constant),
        "ekf" => Ok(WeightUpdate::Ekf),
        other => Err(format!("unknown weight update `{other}`")),
    }
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    Metric::by_name(s).map_err(|e| e.to_string())
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn configured_preset(name: &str, config: &ConfigFile, seeds: Option<Vec<u64>>) -> Result<ExperimentPreset> {
    ExperimentPreset::by_name(name)?.configure(config.params.as_ref(), seeds.or(config.seeds.clone()))
}

fn run(cli: Cli) -> Result<()> {
    let config = ConfigFile::load(cli.config.as_deref())?;
    let workers = cli.workers.unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(CliError::Validation("--workers must be positive".into()));
    }
    match cli.command {
        Command::Simulate { model, profile, t_final } => {
            let out = cli.out.unwrap_or_else(|| "batch.csv".into());
            let args = SimulateArgs { model, profile, t_final, seed: cli.seed.unwrap_or(0), out: out.clone() };
            let batch = simulate_cmd(&args, &config)?;
            println!("wrote {} samples to {}", batch.len(), out.display());
        }
        Command::Estimate { input, scheme, horizon, delta, prior, weight_update } => {
            let out = cli.out.unwrap_or_else(|| "estimates.csv".into());
            let args = EstimateArgs { input, scheme, horizon, delta, prior, update: weight_update, workers, out: out.clone() };
            let seq = estimate_cmd(&args, &config)?;
            println!("wrote {} estimates ({}..={}) to {}", seq.states.len(), seq.start, seq.end(), out.display());
        }
        Command::Analyze { estimates, truth, benchmark, metrics } => {
            let out = cli.out.unwrap_or_else(|| "analysis".into());
            let rows = analyze_cmd(&AnalyzeArgs { estimates, truth, benchmark, metrics, out: out.clone() })?;
            for r in rows {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6e}"));
                println!("{:<24} sse {} perf {} regret/step {}", r.label, f(r.sse), f(r.performance), f(r.regret_per_step));
            }
        }
        Command::Preset { action: PresetAction::List } => {
            for p in PRESETS {
                println!("{p}");
            }
        }
        Command::Preset { action: PresetAction::Show { name } } => {
            let preset = configured_preset(&name, &config, cli.seed.map(|s| vec![s]))?;
            let shown = serde_json::json!({ "preset": name, "seeds": preset.seeds, "params": preset.params_json() });
            println!("{}", serde_json::to_string_pretty(&shown).map_err(CliError::from)?);
        }
        Command::Preset { action: PresetAction::Run { name, seeds } } => {
            let preset = configured_preset(&name, &config, seeds.or(cli.seed.map(|s| vec![s])))?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("runs").join(&name));
            let manifest = run_preset(&preset, workers, &out)?;
            println!("{} seeds, manifest {}", manifest.runs.len(), out.join("manifest.json").display());
            for s in &manifest.summary {
                if let Some(sse) = s.sse {
                    println!("{:<16} median SSE {:.6e} [{:.6e}, {:.6e}]", s.scheme, sse.median, sse.q1, sse.q3);
                }
            }
        }
        Command::Compare { manifests } => {
            let loaded = manifests.iter().map(|p| RunManifest::load(p)).collect::<Result<Vec<_>>>()?;
            let labels: Vec<String> = manifests.iter().map(|p| p.display().to_string()).collect();
            let rows = compare(&loaded, &labels)?;
            match cli.out {
                Some(path) => write_comparison(&rows, std::fs::File::create(path)?)?,
                None => write_comparison(&rows, std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("turnpike: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
