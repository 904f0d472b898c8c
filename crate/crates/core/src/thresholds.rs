//! The persistence threshold χ*(μ, χ₁, χ₂) and the negative-moment exponent.
//!
//! χ* is the smaller of two infima of the auxiliary function `f` over the
//! open quadrant `(β, B) ∈ (0, ∞)²`, the second with χ₁ and χ₂ exchanged.
//! The infimum can sit on the boundary (B → 0), so it is approximated by a
//! logarithmic scan of a box followed by simplex refinement.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elliptic::ModelParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("`{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("q is infinite: β = |χ₂ − B| and χ₁ = χ₂ make the denominator vanish")]
    DegenerateQ,
    #[error("invalid threshold query: {0}")]
    InvalidQuery(String),
}

fn positive(name: &'static str, value: f64) -> Result<(), ThresholdError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ThresholdError::NonPositive { name, value })
    }
}

fn f_unchecked(mu: f64, chi1: f64, chi2: f64, beta: f64, b: f64) -> f64 {
    let gap = (chi2 - b).abs() - beta;
    let mismatch = (chi1 - chi2) * (chi1 - chi2);
    mu * (b + beta) * (1.0 + (b * gap * gap + mismatch * beta) / (4.0 * b * beta))
}

fn q_unchecked(chi1: f64, chi2: f64, beta: f64, b: f64) -> f64 {
    let gap = (chi2 - b).abs() - beta;
    let mismatch = (chi1 - chi2) * (chi1 - chi2);
    4.0 * b * beta / (b * gap * gap + mismatch * beta)
}

/// `f = μ(B+β)(1 + [B(|χ₂−B|−β)² + (χ₁−χ₂)²β] / (4Bβ))`.
pub fn eval_f(mu: f64, chi1: f64, chi2: f64, beta: f64, b: f64) -> Result<f64, ThresholdError> {
    positive("mu", mu)?;
    positive("chi1", chi1)?;
    positive("chi2", chi2)?;
    positive("beta", beta)?;
    positive("B", b)?;
    Ok(f_unchecked(mu, chi1, chi2, beta, b))
}

/// `q = 4Bβ / (B(|χ₂−B|−β)² + (χ₁−χ₂)²β)`, so that `f = μ(B+β)(1 + 1/q)`.
pub fn q_exponent(chi1: f64, chi2: f64, beta: f64, b: f64) -> Result<f64, ThresholdError> {
    positive("chi1", chi1)?;
    positive("chi2", chi2)?;
    positive("beta", beta)?;
    positive("B", b)?;
    let q = q_unchecked(chi1, chi2, beta, b);
    if q.is_finite() {
        Ok(q)
    } else {
        Err(ThresholdError::DegenerateQ)
    }
}

/// Closed form of χ* when χ₁ = χ₂ = χ.
pub fn chi_star_equal(mu: f64, chi: f64) -> f64 {
    if chi < 2.0 {
        mu * chi * chi / 4.0
    } else {
        mu * (chi - 1.0)
    }
}

/// `min{μχ₂ + μ(χ₁−χ₂)²/(4χ₂), μχ₁ + μ(χ₂−χ₁)²/(4χ₁)}`.
pub fn chi_star_upper_bound(mu: f64, chi1: f64, chi2: f64) -> f64 {
    let d2 = (chi1 - chi2) * (chi1 - chi2);
    f64::min(mu * chi2 + mu * d2 / (4.0 * chi2), mu * chi1 + mu * d2 / (4.0 * chi1))
}

/// Rectangle in `(B, β)` scanned on a logarithmic grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBox {
    pub b_min: f64,
    pub b_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl SearchBox {
    pub fn default_for(mu: f64, chi1: f64, chi2: f64) -> SearchBox {
        let cap = 10.0 * (chi1 + chi2 + mu + 1.0);
        SearchBox {
            b_min: 1e-9,
            b_max: cap,
            beta_min: 1e-7,
            beta_max: cap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdQuery {
    pub mu: f64,
    pub chi1: f64,
    pub chi2: f64,
    pub search: SearchBox,
    /// Scan points per axis.
    pub resolution: usize,
    /// Simplex iterations per refinement start.
    pub refine_iterations: usize,
}

pub const MIN_RESOLUTION: usize = 16;

impl ThresholdQuery {
    pub fn new(mu: f64, chi1: f64, chi2: f64) -> ThresholdQuery {
        ThresholdQuery {
            mu,
            chi1,
            chi2,
            search: SearchBox::default_for(mu, chi1, chi2),
            resolution: 64,
            refine_iterations: 200,
        }
    }

    pub fn from_params(p: &ModelParams) -> ThresholdQuery {
        ThresholdQuery::new(p.mu, p.chi1, p.chi2)
    }

    pub fn validate(&self) -> Result<(), ThresholdError> {
        positive("mu", self.mu)?;
        positive("chi1", self.chi1)?;
        positive("chi2", self.chi2)?;
        let s = &self.search;
        if !(s.b_min > 0.0 && s.b_min < s.b_max && s.b_max.is_finite()) {
            return Err(ThresholdError::InvalidQuery(format!(
                "need 0 < B_min < B_max, got [{}, {}]",
                s.b_min, s.b_max
            )));
        }
        if !(s.beta_min > 0.0 && s.beta_min < s.beta_max && s.beta_max.is_finite()) {
            return Err(ThresholdError::InvalidQuery(format!(
                "need 0 < beta_min < beta_max, got [{}, {}]",
                s.beta_min, s.beta_max
            )));
        }
        if self.resolution < MIN_RESOLUTION {
            return Err(ThresholdError::InvalidQuery(format!(
                "resolution must be at least {MIN_RESOLUTION}, got {}",
                self.resolution
            )));
        }
        Ok(())
    }

    fn swapped(&self) -> ThresholdQuery {
        ThresholdQuery {
            chi1: self.chi2,
            chi2: self.chi1,
            ..*self
        }
    }
}

/// Best point found for one branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchMin {
    pub value: f64,
    pub beta: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `f(μ, χ₁, χ₂, ·, ·)`
    Chi1Star,
    /// `f(μ, χ₂, χ₁, ·, ·)`
    Chi2Star,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub chi_star: f64,
    pub branch: Branch,
    pub beta: f64,
    pub b: f64,
    /// Exponent at the argmin; `None` on the degenerate set.
    pub q: Option<f64>,
    /// `a_min − χ*` when model parameters were supplied.
    pub margin: Option<f64>,
}

impl ThresholdResult {
    /// `(χ₁, χ₂)` in the order used by the winning branch.
    pub fn branch_chis(&self, chi1: f64, chi2: f64) -> (f64, f64) {
        match self.branch {
            Branch::Chi1Star => (chi1, chi2),
            Branch::Chi2Star => (chi2, chi1),
        }
    }
}

/// Order on candidates: value, then B, then β.
fn lex(a: &(f64, f64, f64), b: &(f64, f64, f64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2))
}

fn log_axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| {
            if k + 1 == n {
                hi
            } else {
                (a + (b - a) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Scan levels nested inside a resolution: `n, (n+1)/2, …` while each level
/// is a sub-grid of the previous and keeps at least [`MIN_RESOLUTION`]
/// points. Returned as index strides into the finest grid.
fn nested_strides(n: usize) -> Vec<usize> {
    let mut strides = vec![1];
    let mut m = n;
    let mut s = 1;
    while (m - 1).is_multiple_of(2) && m.div_ceil(2) >= MIN_RESOLUTION {
        m = m.div_ceil(2);
        s *= 2;
        strides.push(s);
    }
    strides
}

fn minimize_branch(q: &ThresholdQuery) -> BranchMin {
    let n = q.resolution;
    let bs = log_axis(q.search.b_min, q.search.b_max, n);
    let betas = log_axis(q.search.beta_min, q.search.beta_max, n);
    let values: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|k| f_unchecked(q.mu, q.chi1, q.chi2, betas[k / n], bs[k % n]))
        .collect();

    let lo = [q.search.b_min.ln(), q.search.beta_min.ln()];
    let hi = [q.search.b_max.ln(), q.search.beta_max.ln()];
    let objective = |x: [f64; 2]| f_unchecked(q.mu, q.chi1, q.chi2, x[1].exp(), x[0].exp());

    let mut best = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for stride in nested_strides(n) {
        let mut level_best = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        for jb in (0..n).step_by(stride) {
            for ib in (0..n).step_by(stride) {
                let cand = (values[jb * n + ib], bs[ib], betas[jb]);
                if lex(&cand, &level_best) == Ordering::Less {
                    level_best = cand;
                }
            }
        }
        if lex(&level_best, &best) == Ordering::Less {
            best = level_best;
        }
        if q.refine_iterations > 0 {
            let m = (n - 1) / stride;
            let step = [(hi[0] - lo[0]) / m as f64, (hi[1] - lo[1]) / m as f64];
            let start = [level_best.1.ln(), level_best.2.ln()];
            let (x, fx) = nelder_mead(&objective, start, step, lo, hi, q.refine_iterations);
            let cand = (fx, x[0].exp(), x[1].exp());
            if lex(&cand, &best) == Ordering::Less {
                best = cand;
            }
        }
    }
    BranchMin {
        value: best.0,
        b: best.1,
        beta: best.2,
    }
}

/// Approximate `χ₁* = inf f(μ, χ₁, χ₂, β, B)`.
pub fn chi1_star(query: &ThresholdQuery) -> Result<BranchMin, ThresholdError> {
    query.validate()?;
    Ok(minimize_branch(query))
}

/// Approximate `χ₂* = inf f(μ, χ₂, χ₁, β, B)`.
pub fn chi2_star(query: &ThresholdQuery) -> Result<BranchMin, ThresholdError> {
    query.validate()?;
    Ok(minimize_branch(&query.swapped()))
}

/// `χ* = min(χ₁*, χ₂*)` with the argmin and the exponent there.
pub fn chi_star(query: &ThresholdQuery) -> Result<ThresholdResult, ThresholdError> {
    let first = chi1_star(query)?;
    let second = chi2_star(query)?;
    let pick_second = lex(
        &(second.value, second.b, second.beta),
        &(first.value, first.b, first.beta),
    ) == Ordering::Less;
    let (m, branch, (c1, c2)) = if pick_second {
        (second, Branch::Chi2Star, (query.chi2, query.chi1))
    } else {
        (first, Branch::Chi1Star, (query.chi1, query.chi2))
    };
    Ok(ThresholdResult {
        chi_star: m.value,
        branch,
        beta: m.beta,
        b: m.b,
        q: q_exponent(c1, c2, m.beta, m.b).ok(),
        margin: None,
    })
}

/// χ* for the parameters' (μ, χ₁, χ₂) with the margin `a_min − χ*` filled in.
pub fn chi_star_for(params: &ModelParams, query: &ThresholdQuery) -> Result<ThresholdResult, ThresholdError> {
    let mut r = chi_star(query)?;
    r.margin = Some(params.a_min() - r.chi_star);
    Ok(r)
}

/// `ε₀ = a_min − χ*`.
pub fn persistence_margin(params: &ModelParams, query: &ThresholdQuery) -> Result<f64, ThresholdError> {
    Ok(params.a_min() - chi_star(query)?.chi_star)
}

/// A point with `q < 1` and `f ≤ a_min − 3ε₀/4`, for which the decay bound
/// on `∫(u+v)^{−q}` has explicit constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayWitness {
    pub branch: Branch,
    pub beta: f64,
    pub b: f64,
    pub q: f64,
    pub f: f64,
    pub epsilon0: f64,
}

/// Scan both branches for admissible witnesses and keep the one with the
/// largest `q`. Returns `None` when `ε₀ ≤ 0` or no scan point qualifies.
pub fn decay_witness(
    params: &ModelParams,
    query: &ThresholdQuery,
    epsilon0: f64,
) -> Result<Option<DecayWitness>, ThresholdError> {
    query.validate()?;
    if !(epsilon0 > 0.0) {
        return Ok(None);
    }
    let cap = params.a_min() - 0.75 * epsilon0;
    let n = query.resolution;
    let bs = log_axis(query.search.b_min, query.search.b_max, n);
    let betas = log_axis(query.search.beta_min, query.search.beta_max, n);
    let mut best: Option<DecayWitness> = None;
    for (branch, c1, c2) in [
        (Branch::Chi1Star, query.chi1, query.chi2),
        (Branch::Chi2Star, query.chi2, query.chi1),
    ] {
        let found = (0..n * n)
            .into_par_iter()
            .filter_map(|k| {
                let (beta, b) = (betas[k / n], bs[k % n]);
                let q = q_unchecked(c1, c2, beta, b);
                let f = f_unchecked(query.mu, c1, c2, beta, b);
                (q.is_finite() && q < 1.0 && f <= cap).then_some((q, f, b, beta))
            })
            .collect::<Vec<_>>();
        for (q, f, b, beta) in found {
            let better = match &best {
                None => true,
                Some(w) => {
                    q.total_cmp(&w.q)
                        .then(w.f.total_cmp(&f))
                        .then(w.b.total_cmp(&b))
                        .then(w.beta.total_cmp(&beta))
                        == Ordering::Greater
                }
            };
            if better {
                best = Some(DecayWitness {
                    branch,
                    beta,
                    b,
                    q,
                    f,
                    epsilon0,
                });
            }
        }
    }
    Ok(best)
}

/// Nelder–Mead on a box; points leaving the box are projected back.
fn nelder_mead(
    f: &dyn Fn([f64; 2]) -> f64,
    start: [f64; 2],
    step: [f64; 2],
    lo: [f64; 2],
    hi: [f64; 2],
    iterations: usize,
) -> ([f64; 2], f64) {
    let clamp = |x: [f64; 2]| [x[0].clamp(lo[0], hi[0]), x[1].clamp(lo[1], hi[1])];
    let vertex = |axis: usize| {
        let mut x = start;
        x[axis] += step[axis];
        if x[axis] > hi[axis] {
            x[axis] = start[axis] - step[axis];
        }
        clamp(x)
    };
    let mut simplex: Vec<([f64; 2], f64)> = [clamp(start), vertex(0), vertex(1)]
        .into_iter()
        .map(|x| (x, f(x)))
        .collect();
    let order = |s: &mut Vec<([f64; 2], f64)>| {
        s.sort_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.0[0].total_cmp(&b.0[0]))
                .then(a.0[1].total_cmp(&b.0[1]))
        })
    };
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..iterations {
        order(&mut simplex);
        let centroid = lerp(simplex[0].0, simplex[1].0, 0.5);
        let worst = simplex[2];
        let xr = clamp(lerp(centroid, worst.0, -1.0));
        let fr = f(xr);
        if fr < simplex[0].1 {
            let xe = clamp(lerp(centroid, worst.0, -2.0));
            let fe = f(xe);
            simplex[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[1].1 {
            simplex[2] = (xr, fr);
        } else {
            let xc = if fr < worst.1 {
                lerp(centroid, xr, 0.5)
            } else {
                lerp(centroid, worst.0, 0.5)
            };
            let fc = f(xc);
            if fc < worst.1.min(fr) {
                simplex[2] = (xc, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let x = lerp(best, v.0, 0.5);
                    *v = (x, f(x));
                }
            }
        }
    }
    order(&mut simplex);
    simplex[0]
}
