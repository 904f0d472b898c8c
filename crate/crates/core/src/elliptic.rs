//! The signal equation `0 = Δw − μw + νu + λv` with zero-flux boundary,
//! together with the discrete lower-bound constant δ₀ʰ and the Dirichlet
//! quotient `∫|∇w|²/w²`.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{gradient_faces, laplacian_neumann, Grid, GridError, ScalarField};
use crate::linalg::{direct_fits, pcg, BandedCholesky, Stencil};

/// Largest grid accepted by [`discrete_delta0`] (one solve per cell).
pub const DELTA0_MAX_CELLS: usize = 20_000;
/// Default relative residual tolerance for signal solves.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EllipticError {
    #[error(
        "model constant `{name}` must be positive (all eleven system parameters are positive constants), got {value}"
    )]
    InvalidParam { name: &'static str, value: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("operator is not an M-matrix: {0}")]
    NotMMatrix(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("iterative solve stalled after {iterations} iterations (relative residual {relative_residual:e})")]
    NonConvergence { iterations: usize, relative_residual: f64 },
    #[error("density `{which}` is negative at cell {index} ({value})")]
    NegativeDensity {
        which: &'static str,
        index: usize,
        value: f64,
    },
    #[error("signal residual {residual:e} exceeds bound {bound:e}")]
    ResidualTooLarge { residual: f64, bound: f64 },
    #[error("signal must be positive, found {value} at cell {index}")]
    NonPositiveSignal { index: usize, value: f64 },
    #[error("grid has {cells} cells; δ₀ʰ extraction is limited to {limit}")]
    GridTooLarge { cells: usize, limit: usize },
    #[error("solver was built for shift {solver}, parameters ask for μ = {requested}")]
    ShiftMismatch { solver: f64, requested: f64 },
}

/// The eleven positive constants of the competition-chemotaxis system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub chi1: f64,
    pub chi2: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub mu: f64,
    pub nu: f64,
    pub lambda: f64,
}

impl ModelParams {
    /// Field names in declaration order.
    pub const NAMES: [&'static str; 11] = ["chi1", "chi2", "a1", "a2", "b1", "b2", "c1", "c2", "mu", "nu", "lambda"];

    /// Every constant set to `value`.
    pub fn uniform(value: f64) -> ModelParams {
        ModelParams {
            chi1: value,
            chi2: value,
            a1: value,
            a2: value,
            b1: value,
            b2: value,
            c1: value,
            c2: value,
            mu: value,
            nu: value,
            lambda: value,
        }
    }

    pub fn validate(&self) -> Result<(), EllipticError> {
        for (name, value) in Self::NAMES.iter().zip(self.values()) {
            if !(value.is_finite() && value > 0.0) {
                return Err(EllipticError::InvalidParam { name, value });
            }
        }
        Ok(())
    }

    pub fn values(&self) -> [f64; 11] {
        [
            self.chi1,
            self.chi2,
            self.a1,
            self.a2,
            self.b1,
            self.b2,
            self.c1,
            self.c2,
            self.mu,
            self.nu,
            self.lambda,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES.iter().position(|n| *n == name).map(|k| self.values()[k])
    }

    /// Set a constant by name; returns `false` for unknown names.
    pub fn set(&mut self, name: &str, value: f64) -> bool {
        let slot = match name {
            "chi1" => &mut self.chi1,
            "chi2" => &mut self.chi2,
            "a1" => &mut self.a1,
            "a2" => &mut self.a2,
            "b1" => &mut self.b1,
            "b2" => &mut self.b2,
            "c1" => &mut self.c1,
            "c2" => &mut self.c2,
            "mu" => &mut self.mu,
            "nu" => &mut self.nu,
            "lambda" => &mut self.lambda,
            _ => return false,
        };
        *slot = value;
        true
    }

    pub fn a_min(&self) -> f64 {
        self.a1.min(self.a2)
    }
    pub fn a_max(&self) -> f64 {
        self.a1.max(self.a2)
    }
    pub fn b_min(&self) -> f64 {
        self.b1.min(self.b2)
    }
    pub fn b_max(&self) -> f64 {
        self.b1.max(self.b2)
    }
    pub fn c_min(&self) -> f64 {
        self.c1.min(self.c2)
    }
    pub fn c_max(&self) -> f64 {
        self.c1.max(self.c2)
    }
}

/// How linear systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    /// Banded Cholesky when the factor fits in memory, PCG otherwise.
    #[default]
    Auto,
    Direct,
    Iterative,
}

#[derive(Debug, Clone)]
enum Backend {
    Direct(BandedCholesky),
    Iterative { max_iter: usize },
}

/// Factorized (or iterative) representation of `−Δ_h + σI`.
///
/// Immutable after construction; concurrent solves against one instance are
/// fine.
#[derive(Debug, Clone)]
pub struct HelmholtzSolver {
    stencil: Stencil,
    backend: Backend,
    tol: f64,
    surplus: f64,
}

impl HelmholtzSolver {
    pub fn new(grid: Grid, shift: f64, mode: SolverMode) -> Result<HelmholtzSolver, EllipticError> {
        let stencil = Stencil::new(grid, shift);
        let surplus = stencil.certify_m_matrix().map_err(EllipticError::NotMMatrix)?;
        let direct = match mode {
            SolverMode::Direct => true,
            SolverMode::Iterative => false,
            SolverMode::Auto => direct_fits(&stencil),
        };
        let backend = if direct {
            Backend::Direct(BandedCholesky::factor(&stencil).map_err(EllipticError::Factorization)?)
        } else {
            Backend::Iterative {
                max_iter: 20 * grid.len() + 100,
            }
        };
        Ok(HelmholtzSolver {
            stencil,
            backend,
            tol: DEFAULT_TOLERANCE,
            surplus,
        })
    }

    /// Solver for the signal equation of `params`.
    pub fn for_params(grid: Grid, params: &ModelParams, mode: SolverMode) -> Result<HelmholtzSolver, EllipticError> {
        params.validate()?;
        HelmholtzSolver::new(grid, params.mu, mode)
    }

    pub fn with_tolerance(mut self, tol: f64) -> HelmholtzSolver {
        self.tol = tol;
        self
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn grid(&self) -> &Grid {
        &self.stencil.grid
    }

    pub fn shift(&self) -> f64 {
        self.stencil.shift
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.backend, Backend::Direct(_))
    }

    /// Smallest row surplus of diagonal over off-diagonal mass; equals the
    /// shift for this stencil.
    pub fn dominance_surplus(&self) -> f64 {
        self.surplus
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.stencil.apply(x, &mut y);
        y
    }

    /// Solve `(−Δ_h + σ) x = rhs` without residual post-processing.
    pub fn solve_raw(&self, rhs: &[f64]) -> Result<Vec<f64>, EllipticError> {
        match &self.backend {
            Backend::Direct(chol) => {
                let mut x = rhs.to_vec();
                chol.solve_in_place(&mut x);
                Ok(x)
            }
            Backend::Iterative { max_iter } => {
                let mut x = vec![0.0; rhs.len()];
                pcg(&self.stencil, rhs, &mut x, self.tol * 1e-2, *max_iter).map_err(|e| {
                    EllipticError::NonConvergence {
                        iterations: e.iterations,
                        relative_residual: e.relative_residual,
                    }
                })?;
                Ok(x)
            }
        }
    }

    fn inf_residual(&self, x: &[f64], rhs: &[f64]) -> f64 {
        self.apply(x)
            .iter()
            .zip(rhs)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Solve and enforce `‖A x − rhs‖∞ ≤ tol·‖rhs‖∞`, with one round of
    /// iterative refinement if the first pass misses.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, EllipticError> {
        let mut x = self.solve_raw(rhs)?;
        let bound = self.tol * rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut res = self.inf_residual(&x, rhs);
        if res > bound {
            let ax = self.apply(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let dx = self.solve_raw(&r)?;
            x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
            res = self.inf_residual(&x, rhs);
        }
        if res > bound {
            return Err(EllipticError::ResidualTooLarge { residual: res, bound });
        }
        Ok(x)
    }

    /// Signal `w(·; u, v)` for nonnegative densities.
    pub fn solve_w(
        &self,
        u: &ScalarField,
        v: &ScalarField,
        params: &ModelParams,
    ) -> Result<SignalField, EllipticError> {
        if params.mu != self.shift() {
            return Err(EllipticError::ShiftMismatch {
                solver: self.shift(),
                requested: params.mu,
            });
        }
        let grid = *self.grid();
        if u.grid() != &grid || v.grid() != &grid {
            return Err(GridError::GridMismatch.into());
        }
        check_nonnegative("u", u)?;
        check_nonnegative("v", v)?;
        let source = production(u, v, params);
        if source.iter().all(|&s| s == 0.0) {
            return Ok(SignalField {
                w: ScalarField::zeros(grid),
                degenerate: true,
            });
        }
        let w = self.solve(&source)?;
        if let Some((index, &value)) = w.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
            return Err(EllipticError::NonPositiveSignal { index, value });
        }
        Ok(SignalField {
            w: ScalarField::new(grid, w)?,
            degenerate: false,
        })
    }
}

/// Result of a signal solve. `degenerate` marks an identically zero source,
/// in which case `w ≡ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalField {
    pub w: ScalarField,
    pub degenerate: bool,
}

fn check_nonnegative(which: &'static str, f: &ScalarField) -> Result<(), EllipticError> {
    match f.values().iter().enumerate().find(|(_, &x)| x < 0.0) {
        Some((index, &value)) => Err(EllipticError::NegativeDensity { which, index, value }),
        None => Ok(()),
    }
}

fn production(u: &ScalarField, v: &ScalarField, params: &ModelParams) -> Vec<f64> {
    u.values()
        .iter()
        .zip(v.values())
        .map(|(a, b)| params.nu * a + params.lambda * b)
        .collect()
}

/// One-shot signal solve; builds a solver for the grid of `u`.
pub fn solve_w(u: &ScalarField, v: &ScalarField, params: &ModelParams) -> Result<SignalField, EllipticError> {
    HelmholtzSolver::for_params(*u.grid(), params, SolverMode::Auto)?.solve_w(u, v, params)
}

/// `‖(−Δ_h + μ) w − (νu + λv)‖∞`, evaluated through the grid Laplacian.
pub fn residual(w: &ScalarField, u: &ScalarField, v: &ScalarField, params: &ModelParams) -> Result<f64, EllipticError> {
    if w.grid() != u.grid() || w.grid() != v.grid() {
        return Err(GridError::GridMismatch.into());
    }
    let lap = laplacian_neumann(w);
    let src = production(u, v, params);
    Ok(lap
        .values()
        .iter()
        .zip(w.values())
        .zip(&src)
        .fold(0.0f64, |m, ((l, w), s)| m.max((-l + params.mu * w - s).abs())))
}

/// `min(ν, λ) · min_{i,j} Gʰ(i, j)` where column `j` of the discrete Green
/// matrix solves `(−Δ_h + μ) g = e_j / |cell|`. For every nonnegative pair
/// `(u, v)` on this grid, `min w(·; u, v) ≥ δ₀ʰ ∫(u + v)`.
pub fn discrete_delta0(grid: &Grid, params: &ModelParams) -> Result<f64, EllipticError> {
    let solver = HelmholtzSolver::for_params(*grid, params, SolverMode::Auto)?;
    discrete_delta0_with(&solver, params)
}

pub fn discrete_delta0_with(solver: &HelmholtzSolver, params: &ModelParams) -> Result<f64, EllipticError> {
    let grid = *solver.grid();
    let n = grid.len();
    if n > DELTA0_MAX_CELLS {
        return Err(EllipticError::GridTooLarge {
            cells: n,
            limit: DELTA0_MAX_CELLS,
        });
    }
    let inv_vol = 1.0 / grid.cell_volume();
    let column_min = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rhs = vec![0.0; n];
            rhs[j] = inv_vol;
            solver
                .solve(&rhs)
                .map(|g| g.iter().copied().fold(f64::INFINITY, f64::min))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let gmin = column_min.into_iter().fold(f64::INFINITY, f64::min);
    Ok(params.nu.min(params.lambda) * gmin)
}

/// Memo for [`discrete_delta0`] keyed by grid and (μ, ν, λ).
#[derive(Debug, Default)]
pub struct Delta0Cache {
    entries: Mutex<HashMap<[u64; 9], f64>>,
}

impl Delta0Cache {
    pub fn new() -> Delta0Cache {
        Delta0Cache::default()
    }

    fn key(grid: &Grid, params: &ModelParams) -> [u64; 9] {
        let mut k = [0u64; 9];
        k[0] = grid.dim() as u64;
        for a in 0..grid.dim() {
            k[1 + a] = grid.lengths()[a].to_bits();
            k[3 + a] = grid.cells()[a] as u64;
        }
        k[6] = params.mu.to_bits();
        k[7] = params.nu.to_bits();
        k[8] = params.lambda.to_bits();
        k
    }

    pub fn get_or_compute(&self, grid: &Grid, params: &ModelParams) -> Result<f64, EllipticError> {
        let key = Self::key(grid, params);
        if let Some(&d) = self.entries.lock().expect("delta0 cache poisoned").get(&key) {
            return Ok(d);
        }
        let d = discrete_delta0(grid, params)?;
        self.entries.lock().expect("delta0 cache poisoned").insert(key, d);
        Ok(d)
    }
}

pub(crate) fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// `∫|∇w|²/w²` from face gradients, with the harmonic mean of the two
/// adjacent cells standing in for w on each face.
pub fn dirichlet_quotient(w: &ScalarField) -> Result<f64, EllipticError> {
    if let Some((index, &value)) = w.values().iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(EllipticError::NonPositiveSignal { index, value });
    }
    let grid = *w.grid();
    let grad = gradient_faces(w);
    let vals = w.values();
    let mut total = 0.0;
    for axis in 0..grid.dim() {
        for (idx, &g) in grad.axis(axis).iter().enumerate() {
            if let Some((lo, hi)) = grid.face_cells(axis, idx) {
                let wf = harmonic_mean(vals[lo], vals[hi]);
                total += (g / wf).powi(2);
            }
        }
    }
    Ok(total * grid.cell_volume())
}
