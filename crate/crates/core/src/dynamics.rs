//! Time stepping for the two densities.
//!
//! One step is an IMEX split: explicit donor-cell chemotaxis, implicit
//! diffusion, then a Patankar reaction update. Every stage maps nonnegative
//! data to nonnegative data, so no clipping is needed.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{DiagnosticsConfig, Trajectory};
use crate::elliptic::{
    dirichlet_quotient, discrete_delta0_with, harmonic_mean, EllipticError, HelmholtzSolver, ModelParams, SolverMode,
    DELTA0_MAX_CELLS,
};
use crate::grid::{gradient_faces, integrate, FaceField, Grid, GridError, ScalarField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Elliptic(#[from] EllipticError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid step control: {0}")]
    InvalidControl(String),
    #[error("initial data rejected: {0}")]
    Precondition(String),
    #[error("signal must be positive for the chemotactic flux, found {value} at cell {index}")]
    NonPositiveSignal { index: usize, value: f64 },
    #[error("advection step too large: outflow fraction {fraction} at cell {index}")]
    CflViolation { index: usize, fraction: f64 },
    #[error("density `{which}` left the admissible range at cell {index} ({value})")]
    InvariantViolation {
        which: &'static str,
        index: usize,
        value: f64,
    },
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
}

/// Densities and the signal they generate at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: ScalarField,
    pub v: ScalarField,
    pub w: ScalarField,
}

impl State {
    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    pub fn combined(&self) -> Vec<f64> {
        self.u
            .values()
            .iter()
            .zip(self.v.values())
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn mass_combined(&self) -> f64 {
        integrate(&self.u) + integrate(&self.v)
    }

    pub fn sup_combined(&self) -> f64 {
        self.combined().into_iter().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepControl {
    pub dt_max: f64,
    pub cfl_advection: f64,
    pub cfl_reaction: f64,
    /// Lower clamp applied after each step; zero disables it.
    pub positivity_floor: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            dt_max: 0.01,
            cfl_advection: 0.5,
            cfl_reaction: 0.5,
            positivity_floor: 0.0,
        }
    }
}

impl StepControl {
    pub fn with_dt_max(dt_max: f64) -> StepControl {
        StepControl {
            dt_max,
            ..StepControl::default()
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.dt_max.is_finite() && self.dt_max > 0.0) {
            return Err(DynamicsError::InvalidControl(format!(
                "dt_max must be positive, got {}",
                self.dt_max
            )));
        }
        for (name, f) in [
            ("cfl_advection", self.cfl_advection),
            ("cfl_reaction", self.cfl_reaction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(DynamicsError::InvalidControl(format!(
                    "{name} must lie in (0, 1], got {f}"
                )));
            }
        }
        if !(self.positivity_floor >= 0.0 && self.positivity_floor.is_finite()) {
            return Err(DynamicsError::InvalidControl(format!(
                "positivity_floor must be nonnegative, got {}",
                self.positivity_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ReachedFinalTime,
    SupBlowup,
    MassVanishing,
    SolverFailure,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::ReachedFinalTime => "reached_final_time",
            StopReason::SupBlowup => "sup_blowup",
            StopReason::MassVanishing => "mass_vanishing",
            StopReason::SolverFailure => "solver_failure",
        }
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Termination thresholds relative to the initial data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Guards {
    /// Stop once `‖u+v‖∞ > sup_factor · ‖u₀+v₀‖∞`.
    pub sup_factor: f64,
    /// Stop once `∫(u+v) < mass_factor · ∫(u₀+v₀)`.
    pub mass_factor: f64,
}

impl Default for Guards {
    fn default() -> Self {
        Guards {
            sup_factor: 1e6,
            mass_factor: 1e-12,
        }
    }
}

/// Face velocities `χ (∇w)_f / w_f` with the harmonic mean for `w_f`.
fn face_velocities(w: &ScalarField, chi: f64) -> Result<FaceField, DynamicsError> {
    if let Some((index, &value)) = w.values().iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(DynamicsError::NonPositiveSignal { index, value });
    }
    let grid = *w.grid();
    let mut vel = gradient_faces(w);
    let vals = w.values();
    for axis in 0..grid.dim() {
        for (idx, g) in vel.axis_mut(axis).iter_mut().enumerate() {
            if let Some((lo, hi)) = grid.face_cells(axis, idx) {
                *g = chi * *g / harmonic_mean(vals[lo], vals[hi]);
            }
        }
    }
    Ok(vel)
}

/// Donor-cell flux `χ ρ_upwind (∇w)_f / w_f` on every face (zero on the
/// boundary).
pub fn chemotactic_flux(density: &ScalarField, w: &ScalarField, chi: f64) -> Result<FaceField, DynamicsError> {
    if density.grid() != w.grid() {
        return Err(GridError::GridMismatch.into());
    }
    let grid = *w.grid();
    let mut flux = face_velocities(w, chi)?;
    let rho = density.values();
    for axis in 0..grid.dim() {
        for (idx, f) in flux.axis_mut(axis).iter_mut().enumerate() {
            if let Some((lo, hi)) = grid.face_cells(axis, idx) {
                let donor = if *f > 0.0 { lo } else { hi };
                *f *= rho[donor];
            }
        }
    }
    Ok(flux)
}

/// Net Lotka–Volterra rates `u(a₁ − b₁u − c₁v)` and `v(a₂ − b₂v − c₂u)`.
pub fn reaction_rates(
    u: &ScalarField,
    v: &ScalarField,
    params: &ModelParams,
) -> Result<(ScalarField, ScalarField), DynamicsError> {
    let s = reaction_split(u, v, params)?;
    let net = |prod: &[f64], loss: &[f64], dens: &[f64]| -> Vec<f64> {
        prod.iter().zip(loss).zip(dens).map(|((p, l), d)| p - l * d).collect()
    };
    let grid = *u.grid();
    Ok((
        ScalarField::new(grid, net(&s.production_u, &s.loss_u, u.values()))?,
        ScalarField::new(grid, net(&s.production_v, &s.loss_v, v.values()))?,
    ))
}

/// Production terms and per-capita loss coefficients of the reaction part.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionSplit {
    pub production_u: Vec<f64>,
    pub loss_u: Vec<f64>,
    pub production_v: Vec<f64>,
    pub loss_v: Vec<f64>,
}

pub fn reaction_split(u: &ScalarField, v: &ScalarField, p: &ModelParams) -> Result<ReactionSplit, DynamicsError> {
    if u.grid() != v.grid() {
        return Err(GridError::GridMismatch.into());
    }
    let (uu, vv) = (u.values(), v.values());
    Ok(ReactionSplit {
        production_u: uu.iter().map(|x| p.a1 * x).collect(),
        loss_u: uu.iter().zip(vv).map(|(x, y)| p.b1 * x + p.c1 * y).collect(),
        production_v: vv.iter().map(|y| p.a2 * y).collect(),
        loss_v: vv.iter().zip(uu).map(|(y, x)| p.b2 * y + p.c2 * x).collect(),
    })
}

fn max_speeds(w: &ScalarField, chi: f64) -> [f64; 2] {
    let grid = *w.grid();
    let vals = w.values();
    let grad = gradient_faces(w);
    let mut out = [0.0; 2];
    for (axis, slot) in out.iter_mut().enumerate().take(grid.dim()) {
        for (idx, g) in grad.axis(axis).iter().enumerate() {
            if let Some((lo, hi)) = grid.face_cells(axis, idx) {
                let wf = harmonic_mean(vals[lo], vals[hi]);
                if wf > 0.0 {
                    *slot = f64::max(*slot, (chi * g / wf).abs());
                }
            }
        }
    }
    out
}

fn stable_dt_impl(
    state: &State,
    params: &ModelParams,
    control: &StepControl,
    chemotaxis: bool,
    reactions: bool,
) -> f64 {
    let mut dt = control.dt_max;
    if chemotaxis {
        let speeds = max_speeds(&state.w, params.chi1.max(params.chi2));
        let h = state.grid().spacing();
        let rate: f64 = (0..state.grid().dim()).map(|a| speeds[a] / h[a]).sum();
        if rate > 0.0 {
            dt = dt.min(control.cfl_advection / rate);
        }
    }
    if reactions {
        dt = dt.min(control.cfl_reaction / params.a_max());
    }
    dt
}

/// `min(dt_max, cfl_adv / Σ_axes(max|vel|/h), cfl_reaction / a_max)`.
pub fn stable_dt(state: &State, params: &ModelParams, control: &StepControl) -> f64 {
    stable_dt_impl(state, params, control, true, true)
}

/// Counters accumulated over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: usize,
    pub w_solves: usize,
    /// Largest `∫|∇w|²/w²` seen over all signal solves.
    pub max_dirichlet_quotient: f64,
    /// `min w − δ₀ʰ ∫(u+v)` minimized over all signal solves; `None` when δ₀ʰ
    /// was not computed.
    #[serde(with = "crate::floats::extended_opt")]
    pub min_delta0_margin: Option<f64>,
    #[serde(with = "crate::floats::extended_opt")]
    pub delta0: Option<f64>,
    pub min_density: f64,
    /// `+∞` when no step was taken.
    #[serde(with = "crate::floats::extended")]
    pub smallest_dt: f64,
}

/// Options for [`Simulator::run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub guards: Guards,
    pub allow_single_species: bool,
    pub diagnostics: DiagnosticsConfig,
    /// Compute δ₀ʰ and track the lower-bound margin on every solve.
    pub track_delta0: bool,
}

impl RunOptions {
    pub fn for_grid(grid: &Grid) -> RunOptions {
        RunOptions {
            guards: Guards::default(),
            allow_single_species: false,
            diagnostics: DiagnosticsConfig::for_dim(grid.dim()),
            track_delta0: grid.len() <= DELTA0_MAX_CELLS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub stop: StopReason,
    /// Error text when `stop` is `SolverFailure`.
    pub failure: Option<String>,
    pub state: State,
    pub trajectory: Trajectory,
    pub stats: RunStats,
}

/// Owns the factorizations for one grid and parameter set.
#[derive(Debug, Clone)]
pub struct Simulator {
    grid: Grid,
    params: ModelParams,
    control: StepControl,
    mode: SolverMode,
    chemotaxis: bool,
    reactions: bool,
    signal: HelmholtzSolver,
    diffusion: HashMap<u64, HelmholtzSolver>,
    delta0: Option<f64>,
}

const DIFFUSION_CACHE_LIMIT: usize = 32;

impl Simulator {
    pub fn new(grid: Grid, params: ModelParams, control: StepControl) -> Result<Simulator, DynamicsError> {
        Simulator::with_mode(grid, params, control, SolverMode::Auto)
    }

    pub fn with_mode(
        grid: Grid,
        params: ModelParams,
        control: StepControl,
        mode: SolverMode,
    ) -> Result<Simulator, DynamicsError> {
        control.validate()?;
        let signal = HelmholtzSolver::for_params(grid, &params, mode)?;
        Ok(Simulator {
            grid,
            params,
            control,
            mode,
            chemotaxis: true,
            reactions: true,
            signal,
            diffusion: HashMap::new(),
            delta0: None,
        })
    }

    /// Switch the chemotactic drift on or off.
    pub fn set_chemotaxis(&mut self, on: bool) {
        self.chemotaxis = on;
    }

    /// Switch the Lotka–Volterra kinetics on or off.
    pub fn set_reactions(&mut self, on: bool) {
        self.reactions = on;
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn control(&self) -> &StepControl {
        &self.control
    }

    pub fn signal_solver(&self) -> &HelmholtzSolver {
        &self.signal
    }

    /// δ₀ʰ for this grid and parameters, computed once.
    pub fn delta0(&mut self) -> Result<f64, DynamicsError> {
        if let Some(d) = self.delta0 {
            return Ok(d);
        }
        let d = discrete_delta0_with(&self.signal, &self.params)?;
        self.delta0 = Some(d);
        Ok(d)
    }

    /// Validate initial data and attach its signal.
    pub fn initial_state(
        &self,
        u0: ScalarField,
        v0: ScalarField,
        allow_single_species: bool,
    ) -> Result<State, DynamicsError> {
        if u0.grid() != &self.grid || v0.grid() != &self.grid {
            return Err(GridError::GridMismatch.into());
        }
        for (name, f) in [("u0", &u0), ("v0", &v0)] {
            if let Some((k, &x)) = f.values().iter().enumerate().find(|(_, &x)| x < 0.0) {
                return Err(DynamicsError::Precondition(format!(
                    "{name} is negative at cell {k} ({x})"
                )));
            }
        }
        let (mu, mv) = (integrate(&u0), integrate(&v0));
        if mu == 0.0 && mv == 0.0 {
            return Err(DynamicsError::Precondition("both initial masses vanish".into()));
        }
        if !allow_single_species && (mu == 0.0 || mv == 0.0) {
            return Err(DynamicsError::Precondition(format!(
                "both initial masses must be positive (∫u0 = {mu}, ∫v0 = {mv}); set allow_single_species for one-species runs"
            )));
        }
        let w = self.signal.solve_w(&u0, &v0, &self.params)?.w;
        Ok(State {
            t: 0.0,
            u: u0,
            v: v0,
            w,
        })
    }

    pub fn stable_dt(&self, state: &State) -> f64 {
        stable_dt_impl(state, &self.params, &self.control, self.chemotaxis, self.reactions)
    }

    fn diffusion_solver(&mut self, dt: f64) -> Result<&HelmholtzSolver, DynamicsError> {
        let key = dt.to_bits();
        if !self.diffusion.contains_key(&key) {
            if self.diffusion.len() >= DIFFUSION_CACHE_LIMIT {
                self.diffusion.clear();
            }
            let solver = HelmholtzSolver::new(self.grid, 1.0 / dt, self.mode)?;
            self.diffusion.insert(key, solver);
        }
        Ok(&self.diffusion[&key])
    }

    fn advect(&self, density: &ScalarField, w: &ScalarField, chi: f64, dt: f64) -> Result<Vec<f64>, DynamicsError> {
        let vel = face_velocities(w, chi)?;
        let rho = density.values();
        let n = self.grid.len();
        let mut out_rate = vec![0.0; n];
        let mut inflow = vec![0.0; n];
        for axis in 0..self.grid.dim() {
            let h = self.grid.spacing()[axis];
            for (idx, &s) in vel.axis(axis).iter().enumerate() {
                if let Some((lo, hi)) = self.grid.face_cells(axis, idx) {
                    let (donor, recv) = if s > 0.0 { (lo, hi) } else { (hi, lo) };
                    out_rate[donor] += s.abs() / h;
                    inflow[recv] += s.abs() * rho[donor] / h;
                }
            }
        }
        let mut next = Vec::with_capacity(n);
        for k in 0..n {
            let keep = 1.0 - dt * out_rate[k];
            if keep < 0.0 {
                return Err(DynamicsError::CflViolation {
                    index: k,
                    fraction: dt * out_rate[k],
                });
            }
            next.push(rho[k] * keep + dt * inflow[k]);
        }
        Ok(next)
    }

    /// Advance `state` by `dt`. The returned state carries the signal of the
    /// updated densities.
    pub fn step(&mut self, state: &State, dt: f64) -> Result<State, DynamicsError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(DynamicsError::BadStep(dt));
        }
        let p = self.params;
        let (mut u, mut v) = if self.chemotaxis {
            (
                self.advect(&state.u, &state.w, p.chi1, dt)?,
                self.advect(&state.v, &state.w, p.chi2, dt)?,
            )
        } else {
            (state.u.values().to_vec(), state.v.values().to_vec())
        };

        let inv_dt = 1.0 / dt;
        let diff = self.diffusion_solver(dt)?;
        u.iter_mut().for_each(|x| *x *= inv_dt);
        v.iter_mut().for_each(|x| *x *= inv_dt);
        let mut u = diff.solve(&u)?;
        let mut v = diff.solve(&v)?;

        if self.reactions {
            for (x, y) in u.iter_mut().zip(v.iter_mut()) {
                let (ut, vt) = (*x, *y);
                *x = (ut + dt * p.a1 * ut) / (1.0 + dt * (p.b1 * ut + p.c1 * vt));
                *y = (vt + dt * p.a2 * vt) / (1.0 + dt * (p.b2 * vt + p.c2 * ut));
            }
        }

        let floor = self.control.positivity_floor;
        for (which, vals) in [("u", &mut u), ("v", &mut v)] {
            if floor > 0.0 {
                vals.iter_mut().for_each(|x| *x = x.max(floor));
            }
            if let Some((index, &value)) = vals.iter().enumerate().find(|(_, &x)| !(x >= 0.0 && x.is_finite())) {
                return Err(DynamicsError::InvariantViolation { which, index, value });
            }
        }

        let u = ScalarField::new(self.grid, u)?;
        let v = ScalarField::new(self.grid, v)?;
        let w = self.signal.solve_w(&u, &v, &p)?.w;
        Ok(State {
            t: state.t + dt,
            u,
            v,
            w,
        })
    }

    /// Largest `dt_max / 2^k` not exceeding the stability bound. Restricting
    /// steps to this ladder keeps the number of diffusion factorizations small.
    fn quantized_dt(&self, state: &State) -> f64 {
        let cap = self.stable_dt(state);
        let mut dt = self.control.dt_max;
        let mut k = 0;
        while dt > cap && k < 200 {
            dt *= 0.5;
            k += 1;
        }
        dt
    }

    /// Integrate from `(u0, v0)` to `t_final` or until a guard fires.
    /// Errors are returned only for rejected inputs; failures during the run
    /// end it with [`StopReason::SolverFailure`].
    pub fn run(
        &mut self,
        u0: ScalarField,
        v0: ScalarField,
        t_final: f64,
        opts: &RunOptions,
    ) -> Result<RunOutcome, DynamicsError> {
        if !(t_final.is_finite() && t_final >= 0.0) {
            return Err(DynamicsError::Precondition(format!(
                "t_final must be nonnegative, got {t_final}"
            )));
        }
        opts.diagnostics
            .validate()
            .map_err(|e| DynamicsError::InvalidControl(e.to_string()))?;
        let mut state = self.initial_state(u0, v0, opts.allow_single_species)?;
        let delta0 = if opts.track_delta0 && self.grid.len() <= DELTA0_MAX_CELLS {
            Some(self.delta0()?)
        } else {
            None
        };

        let sup0 = state.sup_combined();
        let mass0 = state.mass_combined();
        let mut stats = RunStats {
            steps: 0,
            w_solves: 1,
            max_dirichlet_quotient: 0.0,
            min_delta0_margin: None,
            delta0,
            min_density: state.u.min().min(state.v.min()),
            smallest_dt: f64::INFINITY,
        };
        observe_signal(&state, delta0, &mut stats);

        let mut traj = Trajectory::new(self.grid, self.params, opts.diagnostics.clone());
        traj.push_state(&state);

        let eps = 1e-12 * t_final.max(1.0);
        let mut failure = None;
        let stop = loop {
            if state.t >= t_final - eps {
                break StopReason::ReachedFinalTime;
            }
            let mut dt = self.quantized_dt(&state);
            let last = state.t + dt >= t_final - eps;
            if last {
                dt = t_final - state.t;
            }
            match self.step(&state, dt) {
                Ok(mut next) => {
                    if last {
                        next.t = t_final;
                    }
                    state = next;
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break StopReason::SolverFailure;
                }
            }
            stats.steps += 1;
            stats.w_solves += 1;
            stats.smallest_dt = stats.smallest_dt.min(dt);
            stats.min_density = stats.min_density.min(state.u.min()).min(state.v.min());
            observe_signal(&state, delta0, &mut stats);

            let sup = state.sup_combined();
            let mass = state.mass_combined();
            let reason = if !(sup <= opts.guards.sup_factor * sup0) {
                Some(StopReason::SupBlowup)
            } else if !(mass >= opts.guards.mass_factor * mass0) {
                Some(StopReason::MassVanishing)
            } else {
                None
            };
            if let Some(r) = reason {
                traj.push_state(&state);
                break r;
            }
            if stats.steps.is_multiple_of(opts.diagnostics.cadence) || state.t >= t_final - eps {
                traj.push_state(&state);
            }
        };
        if traj.last_time() != Some(state.t) {
            traj.push_state(&state);
        }
        Ok(RunOutcome {
            stop,
            failure,
            state,
            trajectory: traj,
            stats,
        })
    }
}

fn observe_signal(state: &State, delta0: Option<f64>, stats: &mut RunStats) {
    if let Ok(q) = dirichlet_quotient(&state.w) {
        stats.max_dirichlet_quotient = stats.max_dirichlet_quotient.max(q);
    }
    if let Some(d) = delta0 {
        let margin = state.w.min() - d * state.mass_combined();
        stats.min_delta0_margin = Some(stats.min_delta0_margin.map_or(margin, |m: f64| m.min(margin)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, divergence_faces};

    fn unit_params() -> ModelParams {
        ModelParams::uniform(1.0)
    }

    #[test]
    fn flux_hand_example() {
        let g = build_grid(1, &[3.0], &[3]).unwrap();
        let h = g.spacing()[0];
        let w = ScalarField::new(g, vec![1.0, 2.0, 1.0]).unwrap();
        let u = ScalarField::constant(g, 1.0);
        let f = chemotactic_flux(&u, &w, 1.0).unwrap();
        let x = f.axis(0);
        assert_eq!(x[0], 0.0);
        assert_eq!(x[3], 0.0);
        assert!((x[1] - 3.0 / (4.0 * h)).abs() < 1e-15);
        assert!((x[2] + 3.0 / (4.0 * h)).abs() < 1e-15);
    }

    #[test]
    fn flux_trivial_cases() {
        let g = build_grid(2, &[1.0, 1.0], &[4, 3]).unwrap();
        let w = ScalarField::constant(g, 2.0);
        let u = ScalarField::from_fn(g, |x| x[0] + x[1]).unwrap();
        assert_eq!(chemotactic_flux(&u, &w, 3.0).unwrap().max_abs(), 0.0);
        let w = ScalarField::from_fn(g, |x| 1.0 + x[0]).unwrap();
        assert_eq!(
            chemotactic_flux(&ScalarField::zeros(g), &w, 3.0).unwrap().max_abs(),
            0.0
        );
        assert!(chemotactic_flux(&u, &ScalarField::zeros(g), 1.0).is_err());
    }

    #[test]
    fn reaction_examples() {
        let g = build_grid(1, &[1.0], &[4]).unwrap();
        let mut p = unit_params();
        p.a1 = 2.0;
        p.b1 = 1.0;
        p.c1 = 0.5;
        let (ru, _) = reaction_rates(&ScalarField::constant(g, 1.0), &ScalarField::constant(g, 1.0), &p).unwrap();
        assert!(ru.values().iter().all(|&r| (r - 0.5).abs() < 1e-15));
        let (ru, rv) = reaction_rates(&ScalarField::constant(g, 2.0), &ScalarField::zeros(g), &p).unwrap();
        assert!(ru.values().iter().all(|&r| r == 0.0));
        assert!(rv.values().iter().all(|&r| r == 0.0));
        let (_, rv) = reaction_rates(&ScalarField::zeros(g), &ScalarField::constant(g, 1.0), &p).unwrap();
        assert!(rv.values().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn stable_dt_examples() {
        let g = build_grid(1, &[1.0], &[10]).unwrap();
        let p = unit_params();
        let flat = State {
            t: 0.0,
            u: ScalarField::constant(g, 1.0),
            v: ScalarField::constant(g, 1.0),
            w: ScalarField::constant(g, 2.0),
        };
        let ctl = StepControl::with_dt_max(1.0);
        assert_eq!(stable_dt(&flat, &p, &ctl), 0.5);

        // w linear with slope 10·w_f gives face speed 10 everywhere
        let g = build_grid(1, &[1.0], &[100]).unwrap();
        let h = 0.01;
        let w = ScalarField::new(g, (0..100).map(|k| (10.0 * h * k as f64).exp()).collect()).unwrap();
        let s = max_speeds(&w, 1.0)[0];
        let st = State {
            t: 0.0,
            u: ScalarField::constant(g, 1.0),
            v: ScalarField::constant(g, 1.0),
            w,
        };
        let dt = stable_dt(&st, &p, &ctl);
        assert!((dt - 0.5 * h / s).abs() < 1e-15);
        assert!((s - 10.0).abs() < 0.05 && (dt - 5e-4).abs() < 5e-6);

        let g2 = build_grid(1, &[1.0], &[200]).unwrap();
        let w2 = ScalarField::new(g2, (0..200).map(|k| (10.0 * 0.005 * k as f64).exp()).collect()).unwrap();
        let st2 = State {
            t: 0.0,
            u: ScalarField::constant(g2, 1.0),
            v: ScalarField::constant(g2, 1.0),
            w: w2,
        };
        let ratio = stable_dt(&st2, &p, &ctl) / dt;
        assert!((ratio - 0.5).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn logistic_map_converges() {
        let g = build_grid(1, &[1.0], &[8]).unwrap();
        let mut p = unit_params();
        p.a1 = 1.5;
        p.b1 = 0.75;
        let mut sim = Simulator::new(g, p, StepControl::with_dt_max(0.1)).unwrap();
        let mut st = sim
            .initial_state(ScalarField::constant(g, 0.1), ScalarField::zeros(g), true)
            .unwrap();
        let mut steps = 0;
        while (st.u.values()[0] - 2.0).abs() > 1e-8 {
            let dt = sim.stable_dt(&st);
            let prev = st.u.values()[0];
            st = sim.step(&st, dt).unwrap();
            let expect = (prev + dt * 1.5 * prev) / (1.0 + dt * 0.75 * prev);
            assert!((st.u.values()[0] - expect).abs() < 1e-13 * expect);
            steps += 1;
            assert!(steps <= 10_000);
        }
        assert!(st.u.values().iter().all(|&x| (x - 2.0).abs() <= 1e-8));
    }

    #[test]
    fn pure_diffusion_conserves_mass() {
        let g = build_grid(2, &[1.0, 2.0], &[12, 9]).unwrap();
        let mut sim = Simulator::new(g, unit_params(), StepControl::with_dt_max(0.05)).unwrap();
        sim.set_chemotaxis(false);
        sim.set_reactions(false);
        let u0 = ScalarField::from_fn(g, |x| if x[0] < 0.3 && x[1] > 1.0 { 5.0 } else { 0.1 }).unwrap();
        let v0 = ScalarField::from_fn(g, |x| 1.0 + x[0] * x[1]).unwrap();
        let mut st = sim.initial_state(u0, v0, false).unwrap();
        for _ in 0..200 {
            let (mu, mv) = (integrate(&st.u), integrate(&st.v));
            st = sim.step(&st, 0.05).unwrap();
            assert!(((integrate(&st.u) - mu) / mu).abs() <= 1e-12);
            assert!(((integrate(&st.v) - mv) / mv).abs() <= 1e-12);
        }
    }

    /// Gaussian elimination with partial pivoting on a dense copy.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            b.swap(c, piv);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn single_step_matches_dense_oracle() {
        let n = 16;
        let g = build_grid(1, &[1.0], &[n]).unwrap();
        let h = g.spacing()[0];
        let mut p = unit_params();
        p.chi1 = 1.3;
        p.chi2 = 0.7;
        p.a1 = 1.2;
        p.c2 = 0.4;
        p.mu = 0.8;
        p.lambda = 0.6;
        let mut sim = Simulator::new(g, p, StepControl::with_dt_max(0.01)).unwrap();
        let u0 = ScalarField::from_fn(g, |x| if (0.2..0.45).contains(&x[0]) { 3.0 } else { 0.2 }).unwrap();
        let v0 = ScalarField::from_fn(g, |x| if (0.6..0.8).contains(&x[0]) { 2.0 } else { 0.5 }).unwrap();
        let st = sim.initial_state(u0.clone(), v0.clone(), false).unwrap();
        let dt = sim.stable_dt(&st);
        let next = sim.step(&st, dt).unwrap();

        // dense Laplacian
        let mut lap = vec![vec![0.0; n]; n];
        for k in 0..n {
            if k > 0 {
                lap[k][k - 1] = 1.0 / (h * h);
                lap[k][k] -= 1.0 / (h * h);
            }
            if k + 1 < n {
                lap[k][k + 1] = 1.0 / (h * h);
                lap[k][k] -= 1.0 / (h * h);
            }
        }
        let helm = |shift: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..n).map(|j| -lap[i][j] + if i == j { shift } else { 0.0 }).collect())
                .collect()
        };
        let src: Vec<f64> = (0..n)
            .map(|k| p.nu * u0.values()[k] + p.lambda * v0.values()[k])
            .collect();
        let w = dense_solve(helm(p.mu), src);
        let wf = ScalarField::new(g, w).unwrap();
        let advect = |rho: &ScalarField, chi: f64| -> Vec<f64> {
            let f = chemotactic_flux(rho, &wf, chi).unwrap();
            let d = divergence_faces(&f).unwrap();
            rho.values().iter().zip(d.values()).map(|(r, dv)| r - dt * dv).collect()
        };
        let ut = dense_solve(helm(1.0 / dt), advect(&u0, p.chi1).iter().map(|x| x / dt).collect());
        let vt = dense_solve(helm(1.0 / dt), advect(&v0, p.chi2).iter().map(|x| x / dt).collect());
        for k in 0..n {
            let eu = (ut[k] + dt * p.a1 * ut[k]) / (1.0 + dt * (p.b1 * ut[k] + p.c1 * vt[k]));
            let ev = (vt[k] + dt * p.a2 * vt[k]) / (1.0 + dt * (p.b2 * vt[k] + p.c2 * ut[k]));
            assert!((next.u.values()[k] - eu).abs() < 1e-13, "u[{k}]");
            assert!((next.v.values()[k] - ev).abs() < 1e-13, "v[{k}]");
        }
    }

    /// Classical RK4 for the spatially homogeneous kinetics.
    fn rk4_homogeneous(p: &ModelParams, mut y: [f64; 2], t: f64, n: usize) -> [f64; 2] {
        let rhs = |y: [f64; 2]| {
            [
                y[0] * (p.a1 - p.b1 * y[0] - p.c1 * y[1]),
                y[1] * (p.a2 - p.b2 * y[1] - p.c2 * y[0]),
            ]
        };
        let h = t / n as f64;
        for _ in 0..n {
            let k1 = rhs(y);
            let k2 = rhs([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
            let k3 = rhs([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
            let k4 = rhs([y[0] + h * k3[0], y[1] + h * k3[1]]);
            for i in 0..2 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        y
    }

    #[test]
    fn homogeneous_run_reaches_ode_equilibrium() {
        let g = build_grid(1, &[1.0], &[16]).unwrap();
        let mut p = unit_params();
        p.c1 = 0.5;
        p.c2 = 0.5;
        let mut sim = Simulator::new(g, p, StepControl::with_dt_max(0.05)).unwrap();
        let opts = RunOptions::for_grid(&g);
        let out = sim
            .run(
                ScalarField::constant(g, 0.2),
                ScalarField::constant(g, 1.5),
                50.0,
                &opts,
            )
            .unwrap();
        assert_eq!(out.stop, StopReason::ReachedFinalTime);
        assert_eq!(out.state.t, 50.0);
        let oracle = rk4_homogeneous(&p, [0.2, 1.5], 50.0, 50_000);
        let total = oracle[0] + oracle[1];
        for s in out.state.combined() {
            assert!((s - total).abs() < 1e-6, "{s} vs {total}");
        }
    }

    #[test]
    fn precondition_rejects_vanishing_mass() {
        let g = build_grid(1, &[1.0], &[8]).unwrap();
        let mut sim = Simulator::new(g, unit_params(), StepControl::default()).unwrap();
        let opts = RunOptions::for_grid(&g);
        let err = sim
            .run(ScalarField::zeros(g), ScalarField::constant(g, 1.0), 1.0, &opts)
            .unwrap_err();
        assert!(matches!(err, DynamicsError::Precondition(_)));
        let single = RunOptions {
            allow_single_species: true,
            ..opts
        };
        let out = sim
            .run(ScalarField::zeros(g), ScalarField::constant(g, 1.0), 1.0, &single)
            .unwrap();
        assert_eq!(out.stop, StopReason::ReachedFinalTime);
    }

    #[test]
    fn runs_are_deterministic() {
        let g = build_grid(1, &[1.0], &[32]).unwrap();
        let p = unit_params();
        let u0 = ScalarField::from_fn(g, |x| 1.0 + (7.0 * x[0]).sin().powi(2)).unwrap();
        let v0 = ScalarField::from_fn(g, |x| 0.5 + x[0]).unwrap();
        let opts = RunOptions::for_grid(&g);
        let a = Simulator::new(g, p, StepControl::default())
            .unwrap()
            .run(u0.clone(), v0.clone(), 2.0, &opts)
            .unwrap();
        let b = Simulator::new(g, p, StepControl::default())
            .unwrap()
            .run(u0, v0, 2.0, &opts)
            .unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.trajectory.records(), b.trajectory.records());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn bumps(n: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..5.0], n)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn step_preserves_positivity(u in bumps(24), v in bumps(24), chi in 0.1f64..6.0) {
                let g = build_grid(1, &[1.0], &[24]).unwrap();
                let mut u = u;
                u[3] += 0.5;
                let mut v = v;
                v[20] += 0.5;
                let mut p = ModelParams::uniform(1.0);
                p.chi1 = chi;
                p.chi2 = 0.5 * chi;
                let mut sim = Simulator::new(g, p, StepControl::with_dt_max(0.05)).unwrap();
                let mut st = sim.initial_state(ScalarField::new(g, u).unwrap(), ScalarField::new(g, v).unwrap(), false).unwrap();
                for _ in 0..5 {
                    let dt = sim.stable_dt(&st);
                    st = sim.step(&st, dt).unwrap();
                    prop_assert!(st.u.min() >= 0.0 && st.v.min() >= 0.0);
                    prop_assert!(st.w.min() > 0.0);
                }
            }

            #[test]
            fn mass_below_logistic_supersolution(u in bumps(20), v in bumps(20), chi in 0.1f64..3.0) {
                let g = build_grid(1, &[2.0], &[20]).unwrap();
                let mut u = u;
                u[0] += 0.1;
                let mut v = v;
                v[19] += 0.1;
                let mut p = ModelParams::uniform(1.0);
                p.chi1 = chi;
                p.a1 = 1.7;
                p.b1 = 0.6;
                let mut sim = Simulator::new(g, p, StepControl::with_dt_max(0.05)).unwrap();
                let mut st = sim.initial_state(ScalarField::new(g, u).unwrap(), ScalarField::new(g, v).unwrap(), false).unwrap();
                let vol = g.volume();
                for _ in 0..5 {
                    let dt = sim.stable_dt(&st);
                    let m = integrate(&st.u);
                    st = sim.step(&st, dt).unwrap();
                    let phi = (m + dt * p.a1 * m) / (1.0 + dt * p.b1 * m / vol);
                    prop_assert!(integrate(&st.u) <= phi * (1.0 + 1e-12));
                }
            }
        }
    }
}
