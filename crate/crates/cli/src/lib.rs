//! Experiment harness behind the `rdslab` binary: configuration loading,
//! the six experiments, and the on-disk artifacts with their manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

pub mod config;
pub mod experiments;
pub mod output;

use config::ExperimentConfig;
use output::{Manifest, OutputDigest, Outputs};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error(transparent)]
    Model(#[from] rdslab::Error),

    #[error("io error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("unknown plot kind `{0}` (expected exponent_history, decay_fit, chart_slice or bound_margins)")]
    UnknownPlotKind(String),
}

impl HarnessError {
    /// 2 for bad input, 3 for a mathematical refusal, 4 for IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Schema { .. } | HarnessError::UnknownPlotKind(_) => 2,
            HarnessError::Model(e) if e.is_refusal() => 3,
            HarnessError::Model(rdslab::Error::Io(_)) | HarnessError::Io { .. } => 4,
            HarnessError::Model(_) => 2,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            HarnessError::Schema { .. } => "config",
            HarnessError::Model(e) => e.code(),
            HarnessError::Io { .. } => "io",
            HarnessError::UnknownPlotKind(_) => "unknown_plot_kind",
        }
    }

    /// One-line JSON diagnostic for stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "error": self.code(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let HarnessError::Schema { path, .. } = self {
            v["path"] = serde_json::Value::from(path.as_str());
        }
        v
    }
}

pub fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    Path::new("out").join(cfg.run.experiment.name())
}

/// Run the configured experiment and write its files, the resolved config
/// and `manifest.json` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Manifest, HarnessError> {
    let started = Instant::now();
    let mut out = Outputs::default();
    experiments::run(cfg, &mut out)?;
    let dir = cfg.run.out_dir.clone().unwrap_or_else(|| default_out_dir(cfg));
    // where the files went is not part of the result
    let mut resolved = cfg.clone();
    resolved.run.out_dir = None;
    out.json("config.json", &resolved);
    let digests = out.write_all(&dir)?;
    let manifest = Manifest {
        experiment: cfg.run.experiment.name().to_string(),
        config_hash: cfg.hash(),
        rdslab_version: rdslab_version().to_string(),
        cli_version: env!("CARGO_PKG_VERSION").to_string(),
        noise_seed: cfg.noise.seed,
        wall_time_s: started.elapsed().as_secs_f64(),
        outputs: digests.into_iter().map(|(file, sha256)| OutputDigest { file, sha256 }).collect(),
    };
    let mut m = Outputs::default();
    m.json("manifest.json", &manifest);
    m.write_all(&dir)?;
    Ok(manifest)
}

fn rdslab_version() -> &'static str {
    // both crates are versioned together
    env!("CARGO_PKG_VERSION")
}
