//! Experiment configuration: one JSON document with `model`, `noise`,
//! `nonlinearity` and `run` blocks, optionally patched by dotted-path
//! overrides before it is validated.

use std::path::{Path, PathBuf};

use rdslab::spectral::ModelConfig;
use rdslab::{NoisePath, Nonlinearity, NonlinearityKind, SpectralModel};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::HarnessError;

/// Built-in configuration, identical to `configs/default.json`.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Lyapunov,
    Stationary,
    Manifold,
    CertifyBounds,
    Convergence,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Lyapunov => "lyapunov",
            Experiment::Stationary => "stationary",
            Experiment::Manifold => "manifold",
            Experiment::CertifyBounds => "certify-bounds",
            Experiment::Convergence => "convergence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub dt: f64,
    pub t_minus: f64,
    pub t_plus: f64,
    /// Intensities of the two boundary channels.
    pub q: [f64; 2],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    /// Block length for exponents and charts.
    pub t0: f64,
    /// Solver steps for `simulate`, orbit length for `stationary`.
    pub n_steps: usize,
    #[serde(default = "default_blocks")]
    pub n_blocks: usize,
    pub upsilon: f64,
    /// Chart radii; the largest is the requested chart radius.
    pub radii: Vec<f64>,
    pub ensemble: usize,
    /// Horizon of the bound checks and of the convergence study.
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Coarsening levels of the convergence study.
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Initial state; zero when absent.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_blocks() -> usize {
    1000
}
fn default_t_end() -> f64 {
    1.0
}
fn default_levels() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    pub nonlinearity: NonlinearityKind,
    pub run: RunConfig,
}

/// Command-line patches applied on top of the JSON document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// `key.path=value` pairs; values parse as JSON, falling back to strings.
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub experiment: Option<Experiment>,
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> HarnessError {
    HarnessError::Schema { path: path.into(), message: message.into() }
}

/// Set `root[a][b]... = value`, creating intermediate objects.
fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), HarnessError> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(schema(key, "empty segment in override path"));
    }
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| schema(parts[..i].join("."), "override path runs through a non-object"))?;
        if i + 1 == parts.len() {
            map.insert((*part).to_string(), value);
            return Ok(());
        }
        node = map.entry((*part).to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last segment")
}

fn parse_override(raw: &str) -> Result<(String, Value), HarnessError> {
    let (key, value) = raw.split_once('=').ok_or_else(|| schema(raw, "override must look like key.path=value"))?;
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.trim().to_string(), value))
}

impl ExperimentConfig {
    /// Read `path` (or the built-in default), apply overrides, deserialize
    /// with field-path diagnostics and re-check cross-field constraints.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, HarnessError> {
        let text = match path {
            Some(p) => {
                std::fs::read_to_string(p).map_err(|source| HarnessError::Io { path: p.to_path_buf(), source })?
            }
            None => DEFAULT_CONFIG.to_string(),
        };
        Self::from_json_str(&text, overrides)
    }

    pub fn from_json_str(text: &str, overrides: &Overrides) -> Result<Self, HarnessError> {
        let mut doc: Value = serde_json::from_str(text)
            .map_err(|e| schema("", format!("not valid JSON (line {}, column {}): {e}", e.line(), e.column())))?;
        if !doc.is_object() {
            return Err(schema("", "top level must be a JSON object"));
        }
        for raw in &overrides.set {
            let (key, value) = parse_override(raw)?;
            set_path(&mut doc, &key, value)?;
        }
        if let Some(seed) = overrides.seed {
            set_path(&mut doc, "noise.seed", Value::from(seed))?;
        }
        if let Some(out) = &overrides.out {
            set_path(&mut doc, "run.out_dir", Value::from(out.to_string_lossy().into_owned()))?;
        }
        if let Some(e) = overrides.experiment {
            set_path(&mut doc, "run.experiment", Value::from(e.name()))?;
        }
        let cfg: Self = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            schema(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Constraints the type system does not express.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let model = self.model()?;
        Nonlinearity::new(self.nonlinearity.clone(), &model).map_err(|e| schema("nonlinearity", e.to_string()))?;
        let n = &self.noise;
        NoisePath::zero(n.dt, n.t_minus, n.t_plus).map_err(|e| schema("noise", e.to_string()))?;
        if n.q.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(schema("noise.q", "intensities must be finite and non-negative"));
        }
        let r = &self.run;
        let blocks = r.t0 / n.dt;
        if !(r.t0 > 0.0) || (blocks - blocks.round()).abs() > 1e-7 * blocks.max(1.0) || blocks.round() < 1.0 {
            return Err(schema("run.t0", format!("{} is not a positive multiple of noise.dt = {}", r.t0, n.dt)));
        }
        if !(r.upsilon > 0.0 && r.upsilon.is_finite()) {
            return Err(schema("run.upsilon", "must be positive"));
        }
        if r.radii.is_empty() || r.radii.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(schema("run.radii", "need at least one positive radius"));
        }
        if r.ensemble == 0 {
            return Err(schema("run.ensemble", "must be at least 1"));
        }
        if r.n_steps == 0 {
            return Err(schema("run.n_steps", "must be at least 1"));
        }
        if !(r.t_end > 0.0 && r.t_end.is_finite()) {
            return Err(schema("run.t_end", "must be positive"));
        }
        if r.levels < 2 {
            return Err(schema("run.levels", "need at least two levels"));
        }
        if r.experiment == Experiment::Convergence {
            let coarse = n.dt * (1u64 << (r.levels - 1).min(20)) as f64;
            let steps = r.t_end / coarse;
            if (steps - steps.round()).abs() > 1e-7 * steps.max(1.0) || steps.round() < 1.0 {
                return Err(schema(
                    "run.t_end",
                    format!("{} is not a multiple of the coarsest step {coarse}", r.t_end),
                ));
            }
        }
        if let Some(x) = &r.initial {
            if x.len() != self.model.n_modes {
                return Err(schema("run.initial", format!("length {} differs from model.n_modes", x.len())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(schema("run.initial", "entries must be finite"));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<SpectralModel, HarnessError> {
        SpectralModel::from_config(&self.model).map_err(|e| match e {
            rdslab::Error::InvalidParameter { name, reason } => schema(format!("model.{name}"), reason),
            other => schema("model", other.to_string()),
        })
    }

    /// SHA-256 of the canonical JSON form, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = ExperimentConfig::from_json_str(DEFAULT_CONFIG, &Overrides::default()).unwrap();
        assert_eq!(c.run.experiment, Experiment::CertifyBounds);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let o = Overrides {
            set: vec!["model.mu=0.25".into(), "nonlinearity={\"kind\":\"linear\",\"c\":0.2}".into()],
            seed: Some(9),
            out: None,
            experiment: Some(Experiment::Lyapunov),
        };
        let c = ExperimentConfig::from_json_str(DEFAULT_CONFIG, &o).unwrap();
        assert_eq!(c.model.mu, 0.25);
        assert_eq!(c.noise.seed, 9);
        assert_eq!(c.nonlinearity, NonlinearityKind::Linear { c: 0.2 });
        assert_eq!(c.run.experiment, Experiment::Lyapunov);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let err = ExperimentConfig::from_json_str("{}", &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("model"), "{err}");
        let o = Overrides { set: vec!["noise.dt=\"fast\"".into()], ..Default::default() };
        match ExperimentConfig::from_json_str(DEFAULT_CONFIG, &o).unwrap_err() {
            HarnessError::Schema { path, .. } => assert_eq!(path, "noise.dt"),
            e => panic!("{e}"),
        }
        let o = Overrides { set: vec!["model.beta=0.1".into()], ..Default::default() };
        match ExperimentConfig::from_json_str(DEFAULT_CONFIG, &o).unwrap_err() {
            HarnessError::Schema { path, .. } => assert_eq!(path, "model.beta"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = ExperimentConfig::from_json_str(DEFAULT_CONFIG, &Overrides::default()).unwrap();
        let o = Overrides { out: Some("elsewhere".into()), ..Default::default() };
        let b = ExperimentConfig::from_json_str(DEFAULT_CONFIG, &o).unwrap();
        assert_eq!(a.hash(), b.hash());
        let o = Overrides { seed: Some(2), ..Default::default() };
        let c = ExperimentConfig::from_json_str(DEFAULT_CONFIG, &o).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
