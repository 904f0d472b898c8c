//! Run configuration files (TOML).
//!
//! ```toml
//! name = "example"
//! t_final = 10.0
//!
//! [grid]
//! dim = 1
//! lengths = [1.0]        # domain side lengths
//! cells = [64]
//!
//! [params]
//! chi1 = 1.0
//! # ... all eleven constants, no defaults
//!
//! [initial.u]
//! kind = "homogeneous"
//! value = 1.0
//!
//! [initial.v]
//! kind = "gaussian"
//! center = [0.3]
//! width = 0.1
//! amplitude = 2.0
//! background = 0.1
//! ```
//!
//! Optional sections: `[step]`, `[guards]`, `[diagnostics]`, `[threshold]`,
//! `[solver]`, `[output]`. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::DiagnosticsConfig;
use crate::dynamics::{Guards, StepControl};
use crate::elliptic::{ModelParams, SolverMode};
use crate::grid::{build_grid, Grid, ScalarField};
use crate::thresholds::ThresholdQuery;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub lengths: Vec<f64>,
    pub cells: Vec<usize>,
}

/// Initial profile of one species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Homogeneous {
        value: f64,
    },
    /// `background + amplitude · exp(−|x − center|² / (2 width²))`
    Gaussian {
        center: Vec<f64>,
        width: f64,
        amplitude: f64,
        #[serde(default)]
        background: f64,
    },
    /// Independent uniform values in `[low, high]` per cell.
    Random {
        seed: u64,
        low: f64,
        high: f64,
    },
    /// `background` plus `count` Gaussian bumps with random centers, widths
    /// in `[0.05, 0.2]·L` and amplitudes in `[0, amplitude]`.
    RandomBumps {
        seed: u64,
        count: usize,
        amplitude: f64,
        background: f64,
    },
    /// Cell values read from a text file, separated by commas or whitespace,
    /// in x-fastest order.
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub u: FieldSpec,
    pub v: FieldSpec,
}

/// Diagnostics settings; omitted fields take the defaults of
/// [`DiagnosticsConfig::for_dim`], and an omitted `q` is taken from the
/// threshold search.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub theta: Option<f64>,
    pub cadence: Option<usize>,
    pub band: Option<f64>,
    pub burn_in: Option<f64>,
}

impl DiagnosticsSpec {
    /// Resolve against the defaults, using `threshold_q` when `q` is unset.
    pub fn resolve(&self, dim: usize, threshold_q: Option<f64>) -> DiagnosticsConfig {
        let mut c = DiagnosticsConfig::for_dim(dim);
        if let Some(p) = self.p {
            c.p = p;
            if self.theta.is_none() {
                c.theta = dim as f64 / (4.0 * p);
            }
        }
        if let Some(q) = self.q.or(threshold_q) {
            c.q = q;
        }
        if let Some(t) = self.theta {
            c.theta = t;
        }
        if let Some(k) = self.cadence {
            c.cadence = k;
        }
        if let Some(b) = self.band {
            c.band = b;
        }
        if let Some(b) = self.burn_in {
            c.burn_in = b;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSpec {
    pub resolution: usize,
    pub refine_iterations: usize,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        ThresholdSpec {
            resolution: 64,
            refine_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub mode: SolverMode,
}

/// Output files; relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub csv: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub t_final: f64,
    #[serde(default)]
    pub allow_single_species: bool,
    pub grid: GridSpec,
    pub params: ModelParams,
    pub initial: InitialSpec,
    #[serde(default)]
    pub step: StepControl,
    #[serde(default)]
    pub guards: Guards,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default)]
    pub threshold: ThresholdSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parse TOML into `T`, reporting the line of the first error.
pub(crate) fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })
}

/// Parse and validate a run configuration. File paths inside it stay
/// relative; see [`load_config`].
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = parse_toml(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Read, parse and validate a config file, resolving relative paths against
/// its directory.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = parse_config(&text)?;
    cfg.rebase(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

fn rebase_path(p: &mut PathBuf, base: &Path) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let grid = self.build_grid()?;
        self.params.validate().map_err(invalid)?;
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(invalid(format!("t_final must be nonnegative, got {}", self.t_final)));
        }
        self.step.validate().map_err(invalid)?;
        if !(self.guards.sup_factor > 1.0 && self.guards.mass_factor > 0.0 && self.guards.mass_factor < 1.0) {
            return Err(invalid("guards need sup_factor > 1 and 0 < mass_factor < 1"));
        }
        self.diagnostics.resolve(grid.dim(), None).validate().map_err(invalid)?;
        self.threshold_query().validate().map_err(invalid)?;
        for (name, spec) in [("u", &self.initial.u), ("v", &self.initial.v)] {
            validate_field_spec(name, spec, &grid)?;
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid, ConfigError> {
        build_grid(self.grid.dim, &self.grid.lengths, &self.grid.cells).map_err(invalid)
    }

    pub fn threshold_query(&self) -> ThresholdQuery {
        let mut q = ThresholdQuery::from_params(&self.params);
        q.resolution = self.threshold.resolution;
        q.refine_iterations = self.threshold.refine_iterations;
        q
    }

    /// Resolve relative input and output paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        for spec in [&mut self.initial.u, &mut self.initial.v] {
            if let FieldSpec::File { path } = spec {
                rebase_path(path, base);
            }
        }
        if let Some(p) = &mut self.output.csv {
            rebase_path(p, base);
        }
        if let Some(p) = &mut self.output.summary {
            rebase_path(p, base);
        }
    }

    pub fn initial_fields(&self) -> Result<(ScalarField, ScalarField), ConfigError> {
        let grid = self.build_grid()?;
        Ok((
            generate_field(&self.initial.u, &grid)?,
            generate_field(&self.initial.v, &grid)?,
        ))
    }
}

fn validate_field_spec(name: &str, spec: &FieldSpec, grid: &Grid) -> Result<(), ConfigError> {
    let nonneg = |what: &str, x: f64| {
        if x.is_finite() && x >= 0.0 {
            Ok(())
        } else {
            Err(invalid(format!("initial.{name}.{what} must be nonnegative, got {x}")))
        }
    };
    match spec {
        FieldSpec::Homogeneous { value } => nonneg("value", *value),
        FieldSpec::Gaussian {
            center,
            width,
            amplitude,
            background,
        } => {
            if center.len() != grid.dim() {
                return Err(invalid(format!(
                    "initial.{name}.center needs {} coordinates, got {}",
                    grid.dim(),
                    center.len()
                )));
            }
            if !(*width > 0.0) {
                return Err(invalid(format!("initial.{name}.width must be positive")));
            }
            nonneg("amplitude", *amplitude)?;
            nonneg("background", *background)
        }
        FieldSpec::Random { low, high, .. } => {
            nonneg("low", *low)?;
            if !(high >= low && high.is_finite()) {
                return Err(invalid(format!("initial.{name} needs low <= high")));
            }
            Ok(())
        }
        FieldSpec::RandomBumps {
            amplitude, background, ..
        } => {
            nonneg("amplitude", *amplitude)?;
            nonneg("background", *background)
        }
        FieldSpec::File { .. } => Ok(()),
    }
}

/// Evaluate an initial-condition generator on `grid`.
pub fn generate_field(spec: &FieldSpec, grid: &Grid) -> Result<ScalarField, ConfigError> {
    let dim = grid.dim();
    let gauss = |x: [f64; 2], c: &[f64], width: f64| {
        let r2: f64 = (0..dim).map(|a| (x[a] - c[a]).powi(2)).sum();
        (-r2 / (2.0 * width * width)).exp()
    };
    let field = match spec {
        FieldSpec::Homogeneous { value } => ScalarField::constant(*grid, *value),
        FieldSpec::Gaussian {
            center,
            width,
            amplitude,
            background,
        } => ScalarField::from_fn(*grid, |x| background + amplitude * gauss(x, center, *width)).map_err(invalid)?,
        FieldSpec::Random { seed, low, high } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let vals = (0..grid.len()).map(|_| rng.gen_range(*low..=*high)).collect();
            ScalarField::new(*grid, vals).map_err(invalid)?
        }
        FieldSpec::RandomBumps {
            seed,
            count,
            amplitude,
            background,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let scale = grid.lengths().iter().copied().fold(f64::INFINITY, f64::min);
            let bumps: Vec<([f64; 2], f64, f64)> = (0..*count)
                .map(|_| {
                    let mut c = [0.0; 2];
                    for (a, slot) in c.iter_mut().enumerate().take(dim) {
                        *slot = rng.gen_range(0.0..grid.lengths()[a]);
                    }
                    let w = rng.gen_range(0.05..0.2) * scale;
                    let amp = rng.gen_range(0.0..=*amplitude);
                    (c, w, amp)
                })
                .collect();
            ScalarField::from_fn(*grid, |x| {
                background + bumps.iter().map(|(c, w, a)| a * gauss(x, c, *w)).sum::<f64>()
            })
            .map_err(invalid)?
        }
        FieldSpec::File { path } => {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            let vals = text
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| invalid(format!("{}: bad number {s:?}: {e}", path.display())))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            if let Some(x) = vals.iter().find(|x| **x < 0.0) {
                return Err(invalid(format!("{}: negative value {x}", path.display())));
            }
            ScalarField::new(*grid, vals).map_err(invalid)?
        }
    };
    Ok(field)
}
