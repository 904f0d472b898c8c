//! Parameter sweeps over a base configuration.
//!
//! ```toml
//! base_file = "competition.toml"      # or an inline [base] table
//! columns = ["chi_star", "persistence_margin"]
//! simulate = true
//! output = "sweep.csv"
//!
//! [[axes]]
//! names = ["a1", "a2"]                # set jointly
//! values = [0.1, 0.3, 1.0, 3.0]
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{load_config, parse_toml, ConfigError, RunConfig};
use super::output::{csv_cell, format_float, write_atomic};
use super::scenario::run_config;
use crate::dynamics::StopReason;
use crate::elliptic::ModelParams;
use crate::thresholds::{chi_star_for, Branch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Model constants set to each value together.
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl SweepAxis {
    pub fn label(&self) -> String {
        self.names.join("=")
    }
}

/// Per-point columns computed without simulating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivedColumn {
    ChiStar,
    PersistenceMargin,
    Q,
    Branch,
}

impl DerivedColumn {
    fn header(&self) -> &'static str {
        match self {
            DerivedColumn::ChiStar => "chi_star",
            DerivedColumn::PersistenceMargin => "persistence_margin",
            DerivedColumn::Q => "q",
            DerivedColumn::Branch => "branch",
        }
    }
}

fn default_columns() -> Vec<DerivedColumn> {
    vec![DerivedColumn::ChiStar, DerivedColumn::PersistenceMargin]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    #[serde(default)]
    base: Option<RunConfig>,
    #[serde(default)]
    base_file: Option<PathBuf>,
    axes: Vec<SweepAxis>,
    #[serde(default = "default_columns")]
    columns: Vec<DerivedColumn>,
    #[serde(default = "default_true")]
    simulate: bool,
    #[serde(default)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub axes: Vec<SweepAxis>,
    pub columns: Vec<DerivedColumn>,
    /// Run every point to `t_final`; otherwise only derived columns are filled.
    pub simulate: bool,
    pub output: Option<PathBuf>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.axes.is_empty() {
            return Err(ConfigError::Invalid("sweep needs at least one axis".into()));
        }
        for axis in &self.axes {
            if axis.names.is_empty() || axis.values.is_empty() {
                return Err(ConfigError::Invalid("sweep axes need names and values".into()));
            }
            for n in &axis.names {
                if !ModelParams::NAMES.contains(&n.as_str()) {
                    return Err(ConfigError::Invalid(format!(
                        "sweep axis name `{n}` is not a model constant (expected one of {})",
                        ModelParams::NAMES.join(", ")
                    )));
                }
            }
        }
        Ok(())
    }

    /// Grid points in axis-major order (first axis outermost).
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
        for axis in &self.axes {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    axis.values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        pts
    }

    fn config_at(&self, point: &[f64]) -> RunConfig {
        let mut cfg = self.base.clone();
        cfg.output = Default::default();
        for (axis, &v) in self.axes.iter().zip(point) {
            for n in &axis.names {
                cfg.params.set(n, v);
            }
        }
        cfg
    }
}

/// Parse a sweep file; `base_dir` resolves `base_file`, `output` and the
/// base config's relative paths.
pub fn parse_sweep(text: &str, base_dir: &Path) -> Result<SweepConfig, ConfigError> {
    let raw: RawSweep = parse_toml(text)?;
    let base = match (raw.base, raw.base_file) {
        (Some(mut b), None) => {
            b.validate()?;
            b.rebase(base_dir);
            b
        }
        (None, Some(f)) => load_config(&base_dir.join(f))?,
        _ => {
            return Err(ConfigError::Invalid(
                "sweep needs exactly one of `base` or `base_file`".into(),
            ))
        }
    };
    let cfg = SweepConfig {
        base,
        axes: raw.axes,
        columns: raw.columns,
        simulate: raw.simulate,
        output: raw.output.map(|p| if p.is_relative() { base_dir.join(p) } else { p }),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_sweep(path: &Path) -> Result<SweepConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_sweep(&text, path.parent().unwrap_or(Path::new(".")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: Vec<f64>,
    pub chi_star: Option<f64>,
    pub persistence_margin: Option<f64>,
    pub q: Option<f64>,
    pub branch: Option<Branch>,
    pub stop: Option<StopReason>,
    pub final_time: Option<f64>,
    pub m0: Option<f64>,
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub m3: Option<f64>,
    pub checks_passed: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub header: Vec<String>,
    pub rows: Vec<SweepRow>,
    columns: Vec<DerivedColumn>,
    simulate: bool,
}

fn evaluate_point(sweep: &SweepConfig, point: &[f64]) -> SweepRow {
    let cfg = sweep.config_at(point);
    let mut row = SweepRow {
        point: point.to_vec(),
        chi_star: None,
        persistence_margin: None,
        q: None,
        branch: None,
        stop: None,
        final_time: None,
        m0: None,
        m1: None,
        m2: None,
        m3: None,
        checks_passed: None,
        error: None,
    };
    if let Err(e) = cfg.params.validate() {
        row.error = Some(e.to_string());
        return row;
    }
    match chi_star_for(&cfg.params, &cfg.threshold_query()) {
        Ok(th) => {
            row.chi_star = Some(th.chi_star);
            row.persistence_margin = th.margin;
            row.q = th.q;
            row.branch = Some(th.branch);
        }
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    }
    if sweep.simulate {
        match run_config(&cfg) {
            Ok(run) => {
                let s = run.summary;
                row.stop = Some(s.stop);
                row.final_time = Some(s.final_time);
                row.checks_passed = Some(s.all_passed());
                if let Some(p) = s.persistence {
                    row.m0 = Some(p.m0);
                    row.m1 = Some(p.m1);
                    row.m2 = Some(p.m2);
                    row.m3 = Some(p.m3);
                }
                if let Some(f) = s.failure {
                    row.error = Some(f);
                }
            }
            Err(e) => row.error = Some(e.to_string()),
        }
    }
    row
}

/// Evaluate every grid point (concurrently) and collect rows in axis-major
/// order. Failures are recorded in the row's `error` column.
pub fn run_sweep(sweep: &SweepConfig) -> SweepTable {
    let rows: Vec<SweepRow> = sweep.points().par_iter().map(|p| evaluate_point(sweep, p)).collect();
    let mut header: Vec<String> = sweep.axes.iter().map(SweepAxis::label).collect();
    header.extend(sweep.columns.iter().map(|c| c.header().to_string()));
    if sweep.simulate {
        for h in ["stop_reason", "final_time", "m0", "m1", "m2", "m3", "checks_passed"] {
            header.push(h.into());
        }
    }
    header.push("error".into());
    SweepTable {
        header,
        rows,
        columns: sweep.columns.clone(),
        simulate: sweep.simulate,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            let mut cells: Vec<String> = r.point.iter().map(|&v| format_float(v)).collect();
            for c in &self.columns {
                cells.push(match c {
                    DerivedColumn::ChiStar => opt(r.chi_star),
                    DerivedColumn::PersistenceMargin => opt(r.persistence_margin),
                    DerivedColumn::Q => opt(r.q),
                    DerivedColumn::Branch => r
                        .branch
                        .map(|b| match b {
                            Branch::Chi1Star => "chi1_star".to_string(),
                            Branch::Chi2Star => "chi2_star".to_string(),
                        })
                        .unwrap_or_default(),
                });
            }
            if self.simulate {
                cells.push(r.stop.map(|s| s.to_string()).unwrap_or_default());
                cells.push(opt(r.final_time));
                for m in [r.m0, r.m1, r.m2, r.m3] {
                    cells.push(opt(m));
                }
                cells.push(r.checks_passed.map(|b| b.to_string()).unwrap_or_default());
            }
            cells.push(csv_cell(r.error.as_deref().unwrap_or("")));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}
