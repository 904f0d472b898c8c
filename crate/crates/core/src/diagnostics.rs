//! Functionals of recorded states and the inequality checks run along a
//! trajectory.
//!
//! Time derivatives are forward differences between consecutive records.
//! Each check widens its bound by a relative `band` to absorb the splitting
//! error of the time stepper.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::State;
use crate::elliptic::{dirichlet_quotient, ModelParams};
use crate::grid::{default_strides, holder_seminorm, integrate, Grid};
use crate::thresholds::{eval_f, q_exponent, Branch, DecayWitness, ThresholdError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("invalid diagnostics config: {0}")]
    InvalidConfig(String),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("trajectory spans {span} time units, shorter than the burn-in {burn_in}")]
    TooShort { span: f64, burn_in: f64 },
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Exponent of `∫(u+v)^p`.
    pub p: f64,
    /// Exponent of `∫(u+v)^{−q}`.
    pub q: f64,
    /// Hölder exponent of the recorded seminorm.
    pub theta: f64,
    /// Record every `cadence` steps.
    pub cadence: usize,
    /// Relative allowance added to every checked bound.
    pub band: f64,
    /// Minimum trajectory length for tail statistics.
    pub burn_in: f64,
}

impl DiagnosticsConfig {
    /// `p = 3N + 1`, `θ = N/(4p)`, `q = 1`, cadence 10, band 5%, burn-in 50.
    pub fn for_dim(dim: usize) -> DiagnosticsConfig {
        let p = 3.0 * dim as f64 + 1.0;
        DiagnosticsConfig {
            p,
            q: 1.0,
            theta: dim as f64 / (4.0 * p),
            cadence: 10,
            band: 0.05,
            burn_in: 50.0,
        }
    }

    pub fn validate(&self) -> Result<(), DiagnosticsError> {
        let bad = |m: String| Err(DiagnosticsError::InvalidConfig(m));
        if !(self.p > 1.0 && self.p.is_finite()) {
            return bad(format!("p must exceed 1, got {}", self.p));
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return bad(format!("q must be positive, got {}", self.q));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if self.cadence == 0 {
            return bad("cadence must be at least 1".into());
        }
        if !(self.band >= 0.0) {
            return bad(format!("band must be nonnegative, got {}", self.band));
        }
        if !(self.burn_in >= 0.0 && self.burn_in.is_finite()) {
            return bad(format!("burn_in must be nonnegative, got {}", self.burn_in));
        }
        Ok(())
    }
}

/// Functionals of one state. Field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass_u: f64,
    pub mass_v: f64,
    pub mass_combined: f64,
    pub lp_moment: f64,
    /// `+∞` when some cell of `u+v` vanishes.
    pub neg_moment: f64,
    /// `−∞` when some cell of `u+v` vanishes.
    pub ln_mass: f64,
    pub min_w: f64,
    pub max_uv: f64,
    pub min_uv: f64,
    pub dirichlet_quotient: f64,
    pub holder_seminorm: f64,
    pub delta0_ratio: f64,
}

impl DiagnosticsRecord {
    pub const COLUMNS: [&'static str; 13] = [
        "t",
        "mass_u",
        "mass_v",
        "mass_combined",
        "lp_moment",
        "neg_moment",
        "ln_mass",
        "min_w",
        "max_uv",
        "min_uv",
        "dirichlet_quotient",
        "holder_seminorm",
        "delta0_ratio",
    ];

    pub fn values(&self) -> [f64; 13] {
        [
            self.t,
            self.mass_u,
            self.mass_v,
            self.mass_combined,
            self.lp_moment,
            self.neg_moment,
            self.ln_mass,
            self.min_w,
            self.max_uv,
            self.min_uv,
            self.dirichlet_quotient,
            self.holder_seminorm,
            self.delta0_ratio,
        ]
    }
}

fn moment(grid: &Grid, uv: &[f64], exponent: f64) -> f64 {
    uv.iter().map(|x| x.powf(exponent)).sum::<f64>() * grid.cell_volume()
}

/// Evaluate every recorded functional of `state`.
pub fn record(state: &State, config: &DiagnosticsConfig) -> DiagnosticsRecord {
    let grid = *state.grid();
    let uv = state.combined();
    let vol = grid.cell_volume();
    let mass_u = integrate(&state.u);
    let mass_v = integrate(&state.v);
    let mass_combined = mass_u + mass_v;
    let min_uv = uv.iter().copied().fold(f64::INFINITY, f64::min);
    let max_uv = uv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (neg_moment, ln_mass) = if min_uv > 0.0 {
        (
            moment(&grid, &uv, -config.q),
            uv.iter().map(|x| x.ln()).sum::<f64>() * vol,
        )
    } else {
        (f64::INFINITY, f64::NEG_INFINITY)
    };
    let min_w = state.w.min();
    let dq = if min_w > 0.0 {
        dirichlet_quotient(&state.w).unwrap_or(f64::NAN)
    } else {
        0.0
    };
    let uv_field = state.u.add(&state.v).expect("densities share a grid");
    let holder = holder_seminorm(&uv_field, config.theta, &default_strides(&grid)).unwrap_or(f64::NAN);
    DiagnosticsRecord {
        t: state.t,
        mass_u,
        mass_v,
        mass_combined,
        lp_moment: moment(&grid, &uv, config.p),
        neg_moment,
        ln_mass,
        min_w,
        max_uv,
        min_uv,
        dirichlet_quotient: dq,
        holder_seminorm: holder,
        delta0_ratio: if mass_combined > 0.0 {
            min_w / mass_combined
        } else {
            0.0
        },
    }
}

/// Records of a run together with the `u+v` cell values at each record, so
/// moments with other exponents can be evaluated afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Grid,
    params: ModelParams,
    config: DiagnosticsConfig,
    records: Vec<DiagnosticsRecord>,
    densities: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(grid: Grid, params: ModelParams, config: DiagnosticsConfig) -> Trajectory {
        Trajectory {
            grid,
            params,
            config,
            records: Vec::new(),
            densities: Vec::new(),
        }
    }

    pub fn push_state(&mut self, state: &State) {
        self.records.push(record(state, &self.config));
        self.densities.push(state.combined());
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &DiagnosticsConfig {
        &self.config
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    /// `u+v` cell values at record `k`.
    pub fn density(&self, k: usize) -> &[f64] {
        &self.densities[k]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.records.last().map(|r| r.t)
    }

    pub fn span(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// `∫(u+v)^e` at every record; `+∞` where a negative power meets a zero.
    pub fn moment_series(&self, exponent: f64) -> Vec<f64> {
        self.densities
            .iter()
            .map(|uv| {
                if exponent < 0.0 && uv.iter().any(|&x| x <= 0.0) {
                    f64::INFINITY
                } else {
                    moment(&self.grid, uv, exponent)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
    Degenerate,
}

/// Outcome of one inequality check. `worst_margin ≥ 0` means the bound held
/// everywhere; margins are relative to the bound unless the detail says
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub status: CheckStatus,
    /// `None` when nothing was evaluated.
    #[serde(with = "crate::floats::extended_opt")]
    pub worst_margin: Option<f64>,
    #[serde(with = "crate::floats::extended_opt")]
    pub worst_time: Option<f64>,
    pub detail: String,
}

impl CheckReport {
    /// A report that carries no margin (not applicable, degenerate, skipped).
    pub fn without_margin(name: &str, status: CheckStatus, detail: impl Into<String>) -> CheckReport {
        CheckReport {
            name: name.into(),
            status,
            worst_margin: None,
            worst_time: None,
            detail: detail.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }

    /// `Pass` and `NotApplicable` are both acceptable outcomes.
    pub fn acceptable(&self) -> bool {
        matches!(self.status, CheckStatus::Pass | CheckStatus::NotApplicable)
    }
}

/// Running minimum of margins with the time at which it occurred.
struct Worst {
    margin: f64,
    time: f64,
}

impl Worst {
    fn new() -> Worst {
        Worst {
            margin: f64::INFINITY,
            time: f64::NAN,
        }
    }

    fn see(&mut self, margin: f64, time: f64) {
        if margin < self.margin || margin.is_nan() && !self.margin.is_nan() {
            self.margin = margin;
            self.time = time;
        }
    }

    fn report(self, name: &str, detail: String) -> CheckReport {
        if self.margin == f64::INFINITY {
            return CheckReport::without_margin(name, CheckStatus::NotApplicable, detail + "; nothing to compare");
        }
        CheckReport {
            name: name.into(),
            status: if self.margin >= 0.0 {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            worst_margin: Some(self.margin),
            worst_time: Some(self.time),
            detail,
        }
    }
}

fn relative(bound: f64, value: f64) -> f64 {
    (bound - value) / bound.abs().max(f64::MIN_POSITIVE)
}

/// `∫u(t) ≤ max{∫u(τ₀), a₁|Ω|/b₁}(1+band)` for every record, likewise for v,
/// plus the tail mean over the last 20% against `a₁|Ω|/b₁` once the run is
/// at least `burn_in` long.
pub fn check_mass_upper(traj: &Trajectory, params: &ModelParams) -> CheckReport {
    const NAME: &str = "mass_upper";
    let recs = traj.records();
    let Some(first) = recs.first() else {
        return CheckReport::without_margin(NAME, CheckStatus::NotApplicable, "empty trajectory");
    };
    let band = traj.config.band;
    if band.is_infinite() {
        return CheckReport::without_margin(NAME, CheckStatus::Pass, "band = ∞");
    }
    let vol = traj.grid.volume();
    let caps = [params.a1 * vol / params.b1, params.a2 * vol / params.b2];
    let starts = [first.mass_u, first.mass_v];
    let mass = |r: &DiagnosticsRecord, s: usize| if s == 0 { r.mass_u } else { r.mass_v };
    let mut worst = Worst::new();
    for s in 0..2 {
        let bound = starts[s].max(caps[s]) * (1.0 + band);
        for r in recs {
            worst.see(relative(bound, mass(r, s)), r.t);
        }
    }
    let mut detail = format!("carrying masses {:.6e}, {:.6e}", caps[0], caps[1]);
    let span = traj.span();
    if span >= traj.config.burn_in && span > 0.0 {
        let end = recs.last().map_or(0.0, |r| r.t);
        let tail: Vec<&DiagnosticsRecord> = recs.iter().filter(|r| r.t >= end - 0.2 * span).collect();
        for s in 0..2 {
            let mean = tail.iter().map(|r| mass(r, s)).sum::<f64>() / tail.len() as f64;
            worst.see(relative(caps[s] * (1.0 + band), mean), end);
            detail.push_str(&format!("; tail mean {} = {:.6e}", ["u", "v"][s], mean));
        }
    }
    worst.report(NAME, detail)
}

/// The constant in `d/dt ∫ln(u+v) ≥ −K`:
/// `K = μ|Ω|max(χ₁²,χ₂²)/4 − a_min|Ω| + (b_max+c_max)(m₁*+m₂*)` with
/// `mᵢ* = max{∫(initial), aᵢ|Ω|/bᵢ}`.
pub fn ln_slope_constant(params: &ModelParams, volume: f64, mass_u0: f64, mass_v0: f64) -> f64 {
    let m1 = mass_u0.max(params.a1 * volume / params.b1);
    let m2 = mass_v0.max(params.a2 * volume / params.b2);
    let chi2 = params.chi1.max(params.chi2).powi(2);
    params.mu * volume * chi2 / 4.0 - params.a_min() * volume + (params.b_max() + params.c_max()) * (m1 + m2)
}

/// Forward-difference slopes of `∫ln(u+v)` against `−K − band·|K|`.
/// Margins are absolute.
pub fn check_ln_mass_slope(traj: &Trajectory, params: &ModelParams) -> CheckReport {
    const NAME: &str = "ln_mass_slope";
    let recs = traj.records();
    if recs.len() < 2 {
        return CheckReport::without_margin(NAME, CheckStatus::NotApplicable, "fewer than two records");
    }
    if recs.iter().any(|r| !r.ln_mass.is_finite()) {
        return CheckReport::without_margin(NAME, CheckStatus::Degenerate, "u+v vanishes somewhere");
    }
    let k = ln_slope_constant(params, traj.grid.volume(), recs[0].mass_u, recs[0].mass_v);
    let band = traj.config.band;
    if band.is_infinite() {
        return CheckReport::without_margin(NAME, CheckStatus::Pass, "band = ∞");
    }
    let floor = -k - band * k.abs();
    let mut worst = Worst::new();
    for pair in recs.windows(2) {
        let dt = pair[1].t - pair[0].t;
        if dt > 0.0 {
            let slope = (pair[1].ln_mass - pair[0].ln_mass) / dt;
            worst.see(slope - floor, pair[0].t);
        }
    }
    worst.report(NAME, format!("K = {k:.6e}"))
}

/// `(1/q) d/dt N ≤ (f − a_min) N + (b_max+c_max) ∫(u+v)^{1−q}` with
/// `N = ∫(u+v)^{−q}` and `f`, `q` evaluated at `(β, B)` on `branch`.
///
/// The right side is averaged over each recording interval; the band is
/// applied to the sum of the absolute values of its terms.
pub fn check_negative_moment_ode(
    traj: &Trajectory,
    params: &ModelParams,
    beta: f64,
    b: f64,
    branch: Branch,
) -> Result<CheckReport, DiagnosticsError> {
    const NAME: &str = "negative_moment_ode";
    let (c1, c2) = match branch {
        Branch::Chi1Star => (params.chi1, params.chi2),
        Branch::Chi2Star => (params.chi2, params.chi1),
    };
    let q = q_exponent(c1, c2, beta, b)?;
    let f = eval_f(params.mu, c1, c2, beta, b)?;
    let recs = traj.records();
    if recs.len() < 2 {
        return Ok(CheckReport::without_margin(
            NAME,
            CheckStatus::NotApplicable,
            "fewer than two records",
        ));
    }
    let band = traj.config.band;
    if band.is_infinite() {
        return Ok(CheckReport::without_margin(NAME, CheckStatus::Pass, "band = ∞"));
    }
    let n = traj.moment_series(-q);
    if n.iter().any(|x| !x.is_finite()) {
        return Ok(CheckReport::without_margin(
            NAME,
            CheckStatus::Degenerate,
            "u+v vanishes somewhere",
        ));
    }
    let pm = traj.moment_series(1.0 - q);
    let growth = f - params.a_min();
    let comp = params.b_max() + params.c_max();
    let rhs = |k: usize| growth * n[k] + comp * pm[k];
    let scale = |k: usize| growth.abs() * n[k] + comp * pm[k];
    let mut worst = Worst::new();
    for k in 0..recs.len() - 1 {
        let dt = recs[k + 1].t - recs[k].t;
        if dt <= 0.0 {
            continue;
        }
        let lhs = (n[k + 1] - n[k]) / (q * dt);
        let r = 0.5 * (rhs(k) + rhs(k + 1));
        let s = 0.5 * (scale(k) + scale(k + 1));
        worst.see((r + band * s - lhs) / s, recs[k].t);
    }
    Ok(worst.report(NAME, format!("q = {q:.6e}, f = {f:.6e}")))
}

/// `N(t) ≤ e^{−ε₀q(t−τ)/2} N(τ) + 2qC_τ/ε₀` with
/// `C_τ = (b_max+c_max)|Ω|^q m*(τ)^{1−q}`, checked from anchors spaced at
/// roughly a tenth of the records.
pub fn check_negative_moment_decay(
    traj: &Trajectory,
    params: &ModelParams,
    witness: Option<&DecayWitness>,
) -> CheckReport {
    const NAME: &str = "negative_moment_decay";
    let Some(wit) = witness else {
        return CheckReport::without_margin(NAME, CheckStatus::NotApplicable, "no q < 1 witness");
    };
    if !(wit.epsilon0 > 0.0) {
        return CheckReport::without_margin(NAME, CheckStatus::NotApplicable, "ε₀ ≤ 0");
    }
    let recs = traj.records();
    if recs.is_empty() {
        return CheckReport::without_margin(NAME, CheckStatus::NotApplicable, "empty trajectory");
    }
    let band = traj.config.band;
    if band.is_infinite() {
        return CheckReport::without_margin(NAME, CheckStatus::Pass, "band = ∞");
    }
    let (q, eps) = (wit.q, wit.epsilon0);
    let n = traj.moment_series(-q);
    if n.iter().any(|x| !x.is_finite()) {
        return CheckReport::without_margin(NAME, CheckStatus::Degenerate, "u+v vanishes somewhere");
    }
    let vol = traj.grid.volume();
    let comp = params.b_max() + params.c_max();
    let stride = (recs.len() / 10).max(1);
    let mut worst = Worst::new();
    for a in (0..recs.len()).step_by(stride) {
        let m_star = recs[a].mass_u.max(params.a1 * vol / params.b1) + recs[a].mass_v.max(params.a2 * vol / params.b2);
        let c_tau = comp * vol.powf(q) * m_star.powf(1.0 - q);
        let floor = 2.0 * q * c_tau / eps;
        for k in a..recs.len() {
            let env = (-eps * q * (recs[k].t - recs[a].t) / 2.0).exp() * n[a] + floor;
            worst.see(relative(env * (1.0 + band), n[k]), recs[k].t);
        }
    }
    worst.report(NAME, format!("q = {q:.6e}, ε₀ = {eps:.6e}"))
}

/// Tail statistics over the last half of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistenceSummary {
    pub tail_start: f64,
    /// Smallest `min(u+v)` on the tail.
    pub m0: f64,
    /// Largest `∫(u+v)^{−q}` on the tail.
    #[serde(with = "crate::floats::extended")]
    pub m1: f64,
    /// Largest `∫(u+v)^p` on the tail.
    #[serde(with = "crate::floats::extended")]
    pub m2: f64,
    /// Largest Hölder seminorm on the tail.
    #[serde(with = "crate::floats::extended")]
    pub m3: f64,
    /// `(max − min)/max` of `min(u+v)` on the tail.
    #[serde(with = "crate::floats::extended")]
    pub tail_variation: f64,
}

pub fn persistence_summary(traj: &Trajectory) -> Result<PersistenceSummary, DiagnosticsError> {
    let recs = traj.records();
    let (Some(first), Some(last)) = (recs.first(), recs.last()) else {
        return Err(DiagnosticsError::EmptyTrajectory);
    };
    let span = last.t - first.t;
    if span < traj.config.burn_in {
        return Err(DiagnosticsError::TooShort {
            span,
            burn_in: traj.config.burn_in,
        });
    }
    let tail_start = last.t - 0.5 * span;
    let tail: Vec<&DiagnosticsRecord> = recs.iter().filter(|r| r.t >= tail_start).collect();
    let fold_max = |f: fn(&DiagnosticsRecord) -> f64| tail.iter().map(|r| f(r)).fold(f64::NEG_INFINITY, f64::max);
    let m0 = tail.iter().map(|r| r.min_uv).fold(f64::INFINITY, f64::min);
    let top = fold_max(|r| r.min_uv);
    Ok(PersistenceSummary {
        tail_start,
        m0,
        m1: fold_max(|r| r.neg_moment),
        m2: fold_max(|r| r.lp_moment),
        m3: fold_max(|r| r.holder_seminorm),
        tail_variation: if top > 0.0 { (top - m0) / top } else { f64::INFINITY },
    })
}

/// Empirical persistence: `min(u+v)` stays positive over the tail.
/// The margin is the empirical M₀* itself.
pub fn check_persistence(traj: &Trajectory) -> Result<CheckReport, DiagnosticsError> {
    let s = persistence_summary(traj)?;
    let worst_time = traj
        .records()
        .iter()
        .filter(|r| r.t >= s.tail_start)
        .find(|r| r.min_uv == s.m0)
        .map(|r| r.t);
    Ok(CheckReport {
        name: "persistence".into(),
        status: if s.m0 > 0.0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        worst_margin: Some(s.m0),
        worst_time,
        detail: format!(
            "M0* = {:.6e}, M1* = {:.6e}, M2* = {:.6e}, M3* = {:.6e}, tail variation = {:.3e}",
            s.m0, s.m1, s.m2, s.m3, s.tail_variation
        ),
    })
}

/// Recorded Dirichlet quotients against `μ|Ω|(1+band)`.
pub fn check_dirichlet_quotient(traj: &Trajectory, params: &ModelParams) -> CheckReport {
    let bound = params.mu * traj.grid.volume() * (1.0 + traj.config.band);
    let mut worst = Worst::new();
    for r in traj.records() {
        worst.see(relative(bound, r.dirichlet_quotient), r.t);
    }
    worst.report("dirichlet_quotient", format!("bound μ|Ω|(1+band) = {bound:.6e}"))
}

/// Recorded `min w / ∫(u+v)` against δ₀ʰ. Margins are absolute.
pub fn check_delta0(traj: &Trajectory, delta0: Option<f64>) -> CheckReport {
    const NAME: &str = "delta0_lower_bound";
    let Some(d) = delta0 else {
        return CheckReport::without_margin(NAME, CheckStatus::NotApplicable, "δ₀ʰ not computed for this grid");
    };
    let mut worst = Worst::new();
    for r in traj.records() {
        worst.see(r.min_w - d * r.mass_combined + 1e-12, r.t);
    }
    worst.report(NAME, format!("δ₀ʰ = {d:.6e}"))
}
