//! Artifact collection, tidy plot-data CSVs and the run manifest.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::HarnessError;

/// Files produced by one experiment, written together at the end.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("results serialize");
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
    }

    /// CSV with an explicit header, so that empty tables still carry one.
    pub fn csv<R: Serialize>(&mut self, name: &str, header: &[&str], rows: &[R]) -> Result<(), HarnessError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let wrap = |e: csv::Error| HarnessError::Io { path: PathBuf::from(name), source: e.into() };
        w.write_record(header).map_err(wrap)?;
        for r in rows {
            w.serialize(r).map_err(wrap)?;
        }
        let bytes =
            w.into_inner().map_err(|e| HarnessError::Io { path: PathBuf::from(name), source: e.into_error() })?;
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Write every file into `dir`; returns `(name, sha256)` in write order.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<(String, String)>, HarnessError> {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
        let mut digests = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|source| HarnessError::Io { path, source })?;
            digests.push((name.clone(), hex(&Sha256::digest(bytes))));
        }
        Ok(digests)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    ExponentHistory,
    DecayFit,
    ChartSlice,
    BoundMargins,
}

impl PlotKind {
    pub fn file_name(self) -> &'static str {
        match self {
            PlotKind::ExponentHistory => "exponent_history.csv",
            PlotKind::DecayFit => "decay_fit.csv",
            PlotKind::ChartSlice => "chart_slice.csv",
            PlotKind::BoundMargins => "bound_margins.csv",
        }
    }
}

impl FromStr for PlotKind {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exponent_history" => Ok(PlotKind::ExponentHistory),
            "decay_fit" => Ok(PlotKind::DecayFit),
            "chart_slice" => Ok(PlotKind::ChartSlice),
            "bound_margins" => Ok(PlotKind::BoundMargins),
            other => Err(HarnessError::UnknownPlotKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HistoryRow {
    pub block: usize,
    pub k: usize,
    pub estimate: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub chart: String,
    pub step: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceRow {
    pub chart: String,
    pub s: f64,
    pub component: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginRow {
    pub sample: usize,
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

/// Tables an experiment may contribute to the plot data.
#[derive(Debug, Clone, Default)]
pub struct PlotResults {
    pub exponent_history: Vec<HistoryRow>,
    pub decay_fit: Vec<DecayRow>,
    pub chart_slice: Vec<SliceRow>,
    pub bound_margins: Vec<MarginRow>,
}

/// Tidy CSV of one kind of result into `out`; header-only when the table is
/// empty.
pub fn emit_plot_data(results: &PlotResults, kind: &str, out: &mut Outputs) -> Result<PlotKind, HarnessError> {
    let kind: PlotKind = kind.parse()?;
    let name = kind.file_name();
    match kind {
        PlotKind::ExponentHistory => out.csv(name, &["block", "k", "estimate", "ci"], &results.exponent_history)?,
        PlotKind::DecayFit => out.csv(name, &["chart", "step", "distance"], &results.decay_fit)?,
        PlotKind::ChartSlice => out.csv(name, &["chart", "s", "component", "value"], &results.chart_slice)?,
        PlotKind::BoundMargins => {
            out.csv(name, &["sample", "check", "lhs", "rhs", "margin"], &results.bound_margins)?
        }
    }
    Ok(kind)
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_hash: String,
    pub rdslab_version: String,
    pub cli_version: String,
    pub noise_seed: u64,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputDigest>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_results_give_header_only_files() {
        let mut out = Outputs::default();
        emit_plot_data(&PlotResults::default(), "chart_slice", &mut out).unwrap();
        assert_eq!(out.files[0].1, b"chart,s,component,value\n");
    }

    #[test]
    fn history_rows_are_tidy() {
        let r = PlotResults {
            exponent_history: vec![HistoryRow { block: 10, k: 0, estimate: 0.5, ci: 0.01 }],
            ..Default::default()
        };
        let mut out = Outputs::default();
        emit_plot_data(&r, "exponent_history", &mut out).unwrap();
        assert_eq!(String::from_utf8(out.files[0].1.clone()).unwrap(), "block,k,estimate,ci\n10,0,0.5,0.01\n");
    }

    #[test]
    fn unknown_kind_is_an_error() {
        let mut out = Outputs::default();
        assert!(matches!(
            emit_plot_data(&PlotResults::default(), "spectrogram", &mut out),
            Err(HarnessError::UnknownPlotKind(_))
        ));
    }
}
