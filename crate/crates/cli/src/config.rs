//! Config files, override merging and per-model defaults.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use turnpike_core::experiments::{LtiConfig, OnlineStudyConfig, ReactorConfig};
use turnpike_core::simulate::{InputProfile, NoiseSpec};
use turnpike_core::solver::SolverOptions;
use turnpike_core::{CostSpec, SystemModel};

use crate::error::{CliError, Result};

/// Contents of a `--config` file. Every section is optional; commands read
/// the parts they need.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    /// Seeds for `preset run`.
    pub seeds: Option<Vec<u64>>,
    /// Preset parameter overrides, merged into the preset defaults.
    pub params: Option<toml::Table>,
    pub simulate: SimulateSettings,
    pub estimate: EstimateSettings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub x0: Option<Vec<f64>>,
    pub noise: Option<NoiseSpec>,
    /// Full profile description; replaces `--profile`.
    pub profile: Option<InputProfile>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSettings {
    /// Diagonal stage weights; model defaults when absent.
    pub q: Option<Vec<f64>>,
    pub r: Option<Vec<f64>>,
    /// Terminal weight, `r` when absent.
    pub g: Option<Vec<f64>>,
    /// Initial prior mean for `mhe-prior`; nominal state when absent.
    pub prior_mean: Option<Vec<f64>>,
    /// Initial prior weight `w0·I`.
    pub w0: Option<f64>,
    /// Kalman initial estimate and covariance diagonal.
    pub x0: Option<Vec<f64>>,
    pub p0: Option<Vec<f64>>,
    pub solver: Option<SolverOptions>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", p.display())))?;
                Ok(toml::from_str(&text)?)
            }
        }
    }
}

/// Recursively merges `overlay` into `base`; tables merge, everything else
/// replaces.
pub fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `defaults` with `overrides` applied, checked by deserializing back.
pub fn with_overrides<T: Serialize + DeserializeOwned>(defaults: &T, overrides: Option<&toml::Table>) -> Result<T> {
    let mut value = serde_json::to_value(defaults)?;
    if let Some(o) = overrides {
        merge(&mut value, serde_json::to_value(o)?);
    }
    serde_json::from_value(value).map_err(|e| CliError::Validation(format!("invalid parameter override: {e}")))
}

/// Simulation and estimation defaults of each model, taken from the
/// experiment that uses it.
#[derive(Debug, Clone)]
pub struct ModelDefaults {
    pub x0: Vec<f64>,
    pub profile: InputProfile,
    pub noise: NoiseSpec,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub horizon: usize,
    pub w0: f64,
}

pub fn model_defaults(model: &SystemModel) -> ModelDefaults {
    let d = model.dims();
    let online = |c: OnlineStudyConfig| ModelDefaults {
        x0: c.x0,
        profile: c.profile,
        noise: c.noise,
        q: c.q,
        r: c.r,
        horizon: c.horizon,
        w0: c.w0,
    };
    match model.id() {
        "cstr" => online(OnlineStudyConfig::cstr()),
        "quadrotor" => online(OnlineStudyConfig::quadrotor()),
        "reactor" => {
            let c = ReactorConfig::default();
            ModelDefaults {
                x0: c.x0.clone(),
                profile: InputProfile::reactor_default(),
                noise: NoiseSpec::uniform(vec![c.w_bound; 2], vec![c.v_bound]),
                q: c.q,
                r: vec![c.r],
                horizon: 40,
                w0: 1.0,
            }
        }
        id if id.starts_with("lti:") => {
            let c = LtiConfig { n: d.n, m: d.m, p: d.p, ..LtiConfig::default() };
            ModelDefaults {
                x0: vec![0.0; d.n],
                profile: InputProfile::Sinusoid { amplitude: c.input_amplitude, period: c.input_period, offset: vec![] },
                noise: c.noise(),
                q: vec![1.0; d.q],
                r: vec![1.0; d.p],
                horizon: c.horizon,
                w0: 1.0,
            }
        }
        _ => ModelDefaults {
            x0: model.nominal_state().iter().copied().collect(),
            profile: InputProfile::Zero,
            noise: NoiseSpec::uniform(vec![0.5; d.q], vec![1.0; d.p]),
            q: vec![1.0; d.q],
            r: vec![1.0; d.p],
            horizon: 10,
            w0: 1.0,
        },
    }
}

impl EstimateSettings {
    pub fn cost(&self, defaults: &ModelDefaults) -> Result<CostSpec> {
        let q = self.q.clone().unwrap_or_else(|| defaults.q.clone());
        let r = self.r.clone().unwrap_or_else(|| defaults.r.clone());
        let g = self.g.clone().unwrap_or_else(|| r.clone());
        Ok(CostSpec::diagonal(&q, &r, &g)?)
    }
}
