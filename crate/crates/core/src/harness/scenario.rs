//! Running one configured scenario end to end: threshold search, time
//! integration, trajectory checks and output files.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{parse_config, ConfigError, RunConfig};
use super::output::{write_json, write_trajectory_csv};
use crate::diagnostics::{
    check_ln_mass_slope, check_mass_upper, check_negative_moment_decay, check_negative_moment_ode, check_persistence,
    CheckReport, CheckStatus, DiagnosticsError, PersistenceSummary,
};
use crate::dynamics::{DynamicsError, RunOptions, RunOutcome, RunStats, Simulator, StopReason};
use crate::elliptic::DELTA0_MAX_CELLS;
use crate::thresholds::{chi_star_for, decay_witness, DecayWitness, ThresholdError, ThresholdResult};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: Option<String>,
    pub stop: StopReason,
    pub failure: Option<String>,
    pub final_time: f64,
    pub threshold: ThresholdResult,
    pub witness: Option<DecayWitness>,
    /// Empirical M₀*–M₃* over the tail; `None` for runs shorter than the
    /// burn-in.
    pub persistence: Option<PersistenceSummary>,
    pub checks: Vec<CheckReport>,
    pub stats: RunStats,
    pub wall_clock_seconds: f64,
}

impl RunSummary {
    /// True when no check reports `Fail`.
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Summary together with the full outcome of the run.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub summary: RunSummary,
    pub outcome: RunOutcome,
}

fn relative_report(name: &str, bound: f64, value: Option<f64>, time: Option<f64>, detail: String) -> CheckReport {
    match value {
        None => CheckReport::without_margin(name, CheckStatus::NotApplicable, detail),
        Some(v) => {
            let margin = (bound - v) / bound.abs().max(f64::MIN_POSITIVE);
            CheckReport {
                name: name.into(),
                status: if margin >= 0.0 {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Fail
                },
                worst_margin: Some(margin),
                worst_time: time,
                detail,
            }
        }
    }
}

/// Integrate a configuration and evaluate every check. Nothing is written.
pub fn run_config(cfg: &RunConfig) -> Result<ScenarioRun, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let grid = cfg.build_grid()?;
    let params = cfg.params;
    let query = cfg.threshold_query();
    let threshold = chi_star_for(&params, &query)?;
    let epsilon0 = threshold.margin.unwrap_or(f64::NEG_INFINITY);
    let witness = decay_witness(&params, &query, epsilon0)?;

    let diag = cfg.diagnostics.resolve(grid.dim(), threshold.q);
    let opts = RunOptions {
        guards: cfg.guards,
        allow_single_species: cfg.allow_single_species,
        diagnostics: diag.clone(),
        track_delta0: grid.len() <= DELTA0_MAX_CELLS,
    };
    let (u0, v0) = cfg.initial_fields()?;
    let mut sim = Simulator::with_mode(grid, params, cfg.step, cfg.solver.mode)?;
    let outcome = sim.run(u0, v0, cfg.t_final, &opts)?;
    let traj = &outcome.trajectory;

    let mut checks = Vec::new();
    checks.push(match outcome.stop {
        StopReason::ReachedFinalTime => CheckReport {
            name: "global_existence".into(),
            status: CheckStatus::Pass,
            worst_margin: Some(0.0),
            worst_time: Some(outcome.state.t),
            detail: "reached_final_time".into(),
        },
        other => CheckReport {
            name: "global_existence".into(),
            status: if epsilon0 > 0.0 {
                CheckStatus::Fail
            } else {
                CheckStatus::NotApplicable
            },
            worst_margin: Some(outcome.state.t - cfg.t_final),
            worst_time: Some(outcome.state.t),
            detail: format!("stopped early: {other}"),
        },
    });
    checks.push(check_mass_upper(traj, &params));
    checks.push(check_ln_mass_slope(traj, &params));
    checks.push(
        check_negative_moment_ode(traj, &params, threshold.beta, threshold.b, threshold.branch).unwrap_or_else(|e| {
            CheckReport::without_margin("negative_moment_ode", CheckStatus::Degenerate, e.to_string())
        }),
    );
    checks.push(check_negative_moment_decay(traj, &params, witness.as_ref()));

    let persistence = if epsilon0 > 0.0 {
        match check_persistence(traj) {
            Ok(report) => {
                checks.push(report);
                crate::diagnostics::persistence_summary(traj).ok()
            }
            Err(e @ DiagnosticsError::TooShort { .. }) => {
                checks.push(CheckReport::without_margin(
                    "persistence",
                    CheckStatus::NotApplicable,
                    e.to_string(),
                ));
                None
            }
            Err(e) => {
                checks.push(CheckReport::without_margin(
                    "persistence",
                    CheckStatus::Degenerate,
                    e.to_string(),
                ));
                None
            }
        }
    } else {
        checks.push(CheckReport::without_margin(
            "persistence",
            CheckStatus::NotApplicable,
            format!("a_min - chi* = {epsilon0:.6e} is not positive"),
        ));
        crate::diagnostics::persistence_summary(traj).ok()
    };

    let volume = grid.volume();
    let dq_bound = params.mu * volume * (1.0 + diag.band);
    checks.push(relative_report(
        "dirichlet_quotient",
        dq_bound,
        Some(outcome.stats.max_dirichlet_quotient),
        None,
        format!(
            "max over {} signal solves = {:.6e}, bound μ|Ω|(1+band) = {dq_bound:.6e}",
            outcome.stats.w_solves, outcome.stats.max_dirichlet_quotient
        ),
    ));
    checks.push(match (outcome.stats.delta0, outcome.stats.min_delta0_margin) {
        (Some(d), Some(m)) => CheckReport {
            name: "delta0_lower_bound".into(),
            status: if m >= -1e-12 {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            worst_margin: Some(m + 1e-12),
            worst_time: None,
            detail: format!("δ₀ʰ = {d:.6e}; min w − δ₀ʰ∫(u+v) over all solves = {m:.6e}"),
        },
        _ => CheckReport::without_margin(
            "delta0_lower_bound",
            CheckStatus::NotApplicable,
            "grid too large for δ₀ʰ",
        ),
    });

    let summary = RunSummary {
        name: cfg.name.clone(),
        stop: outcome.stop,
        failure: outcome.failure.clone(),
        final_time: outcome.state.t,
        threshold,
        witness,
        persistence,
        checks,
        stats: outcome.stats,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(ScenarioRun { summary, outcome })
}

/// [`run_config`] followed by writing the configured CSV and JSON outputs.
pub fn run_scenario(cfg: &RunConfig) -> Result<ScenarioRun, HarnessError> {
    let run = run_config(cfg)?;
    if let Some(path) = &cfg.output.csv {
        write_trajectory_csv(path, &run.outcome.trajectory).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
    }
    if let Some(path) = &cfg.output.summary {
        write_json(path, &run.summary).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(run)
}

const SCENARIOS: [(&str, &str); 5] = [
    (
        "logistic_homogeneous",
        include_str!("../../scenarios/logistic_homogeneous.toml"),
    ),
    (
        "competition_bumps_1d",
        include_str!("../../scenarios/competition_bumps_1d.toml"),
    ),
    (
        "coexistence_homogeneous",
        include_str!("../../scenarios/coexistence_homogeneous.toml"),
    ),
    (
        "strong_chemotaxis_1d",
        include_str!("../../scenarios/strong_chemotaxis_1d.toml"),
    ),
    ("bumps_2d", include_str!("../../scenarios/bumps_2d.toml")),
];

/// The built-in scenario suite (all run to t = 100).
pub fn default_scenarios() -> Vec<(&'static str, RunConfig)> {
    SCENARIOS
        .iter()
        .map(|(name, text)| (*name, parse_config(text).expect("built-in scenario parses")))
        .collect()
}

pub fn default_scenario(name: &str) -> Option<RunConfig> {
    default_scenarios()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| c)
}
