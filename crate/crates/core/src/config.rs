//! Run configuration: one TOML file describing the model, simulation,
//! filtering and training, with dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::msk::{ActivationParams, GeometryPoly, JointParams, MskModel, MuscleParams};
use crate::penn::{Hyper, TrainConfig};
use crate::signal::{butterworth_design, EmgPipeline, FilterSpec};
use crate::sim::{ExcitationSpec, SimConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("bad override `{0}`: expected section.key=value")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Simulation settings; the seed comes from the run's master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_stride")]
    pub stride: usize,
    #[serde(default = "d_duration")]
    pub duration: f64,
    #[serde(default = "d_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub theta_0: f64,
    #[serde(default)]
    pub theta_dot_0: f64,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub excitation: ExcitationSpec,
}

fn d_dt() -> f64 {
    0.001
}
fn d_stride() -> usize {
    1
}
fn d_duration() -> f64 {
    20.0
}
fn d_trials() -> usize {
    5
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: d_dt(),
            stride: d_stride(),
            duration: d_duration(),
            n_trials: d_trials(),
            theta_0: 0.0,
            theta_dot_0: 0.0,
            noise_std: 0.0,
            excitation: ExcitationSpec::default(),
        }
    }
}

impl SimSection {
    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            dt: self.dt,
            stride: self.stride,
            duration: self.duration,
            theta_0: self.theta_0,
            theta_dot_0: self.theta_dot_0,
            excitation: self.excitation.clone(),
            noise_std: self.noise_std,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub joint: JointParams,
    pub activation: ActivationParams,
    pub muscles: Vec<MuscleParams>,
    pub geometry: GeometryPoly,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub filters: EmgPipeline,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: Hyper,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, overrides)
    }

    /// Parses `text`, applies `key.path=value` overrides in order, then
    /// checks the schema and every cross-field constraint.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut cfg: Self = if overrides.is_empty() {
            deserialize(text)?
        } else {
            let mut table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            let merged = toml::to_string(&table).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            deserialize(&merged).map_err(|e| match e {
                ConfigError::Schema { path, message } => ConfigError::Schema {
                    path,
                    message: format!("{message}\n(line numbers refer to the configuration with --set overrides applied)"),
                },
                e => e,
            })?
        };
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn msk_model(&self) -> MskModel {
        MskModel {
            muscles: self.muscles.clone(),
            activation: self.activation,
            geometry: self.geometry.clone(),
            joint: self.joint,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        self.sim.sim_config(self.seed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if self.geometry.n_muscles() != self.muscles.len() {
            return Err(ConfigError::Invalid(format!(
                "{} muscles but {} geometry polynomials",
                self.muscles.len(),
                self.geometry.n_muscles()
            )));
        }
        self.msk_model().validate().map_err(|e| invalid(&e))?;
        self.sim_config().validate().map_err(|e| invalid(&e))?;
        if self.sim.n_trials == 0 {
            return Err(ConfigError::Invalid("sim.n_trials must be >= 1".into()));
        }
        self.train.validate().map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        let f = &self.filters;
        let fs_ref = (2.0 * f.band_hz[1]).max(f.fs_out) * 1.0001;
        for spec in [
            FilterSpec::bandpass(f.band_order, f.band_hz[0], f.band_hz[1], fs_ref),
            FilterSpec::lowpass(f.envelope_order, f.envelope_hz, fs_ref),
            FilterSpec::lowpass(f.angle_order, f.angle_cutoff_hz, f.fs_out),
        ] {
            butterworth_design(&spec).map_err(|e| invalid(&e))?;
        }
        Ok(())
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration always serializes")
    }
}

fn deserialize(text: &str) -> Result<RunConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
        path: e.path().to_string(),
        message: e.into_inner().to_string().trim_end().to_string(),
    })
}

fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Sets `a.b.0.c = value`, creating intermediate tables. Numeric segments
/// index into existing arrays.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::Override(assignment.to_string());
    let (key, raw) = assignment.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad());
    }
    let value = parse_value(raw.trim());
    let (last, walk) = parts.split_last().expect("non-empty path");
    let mut cur: &mut Value = table
        .entry(parts[0].to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    if walk.is_empty() {
        *cur = value;
        return Ok(());
    }
    for seg in walk[1..].iter().chain(std::iter::once(last)) {
        let is_last = std::ptr::eq(seg, last);
        cur = match cur {
            Value::Table(t) => {
                if is_last {
                    t.insert(seg.to_string(), value);
                    return Ok(());
                }
                t.entry(seg.to_string()).or_insert_with(|| Value::Table(Table::new()))
            }
            Value::Array(a) => {
                let i: usize = seg.parse().map_err(|_| bad())?;
                let slot = a.get_mut(i).ok_or_else(bad)?;
                if is_last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad()),
        };
    }
    unreachable!("loop returns on the last segment")
}
