//! Simulation and analysis of a two-species competition model with
//! logarithmic-sensitivity chemotaxis toward a shared, elliptically
//! determined signal:
//!
//! ```text
//! u_t = Δu − χ₁∇·(u∇w/w) + u(a₁ − b₁u − c₁v)
//! v_t = Δv − χ₂∇·(v∇w/w) + v(a₂ − b₂v − c₂u)
//! 0   = Δw − μw + νu + λv
//! ```
//!
//! on a box with homogeneous Neumann boundary conditions.
//!
//! * [`grid`]: cell-centered finite-volume grids and fields.
//! * [`elliptic`]: the signal solve and its discrete lower bound.
//! * [`dynamics`]: positivity-preserving time stepping.
//! * [`thresholds`]: the chemotactic threshold `χ*(μ, χ₁, χ₂)`.
//! * [`diagnostics`]: trajectory records and inequality checks.
//! * [`harness`]: configuration files, sweeps, output and the CLI.

pub mod diagnostics;
pub mod dynamics;
pub mod elliptic;
mod floats;
pub mod grid;
pub mod harness;
mod linalg;
pub mod thresholds;

pub use diagnostics::{CheckReport, CheckStatus, DiagnosticsConfig, DiagnosticsRecord, Trajectory};
pub use dynamics::{RunOptions, RunOutcome, Simulator, State, StepControl, StopReason};
pub use elliptic::{discrete_delta0, solve_w, HelmholtzSolver, ModelParams, SolverMode};
pub use grid::{build_grid, Grid, ScalarField};
pub use harness::{parse_config, run_scenario, RunConfig, RunSummary};
pub use thresholds::{chi_star, chi_star_for, ThresholdQuery, ThresholdResult};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/grid.md")]
    struct Grid;
    #[doc = include_str!("../../../book/src/elliptic.md")]
    struct Elliptic;
    #[doc = include_str!("../../../book/src/dynamics.md")]
    struct Dynamics;
    #[doc = include_str!("../../../book/src/thresholds.md")]
    struct Thresholds;
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    struct Diagnostics;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
    #[doc = include_str!("../../../README.md")]
    struct Readme;
}
