//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr
//! (bypassing output capture) and then asserts.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

use chemolab::dynamics::{Simulator, StepControl};
use chemolab::elliptic::{discrete_delta0, solve_w, ModelParams};
use chemolab::grid::{build_grid, Grid, ScalarField};
use chemolab::harness::{default_scenario, default_scenarios, run_config, FieldSpec, ScenarioRun};
use chemolab::thresholds::{chi_star, eval_f, q_exponent, Branch, ThresholdQuery};
use chemolab::StopReason;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, title: &str, ok: bool, detail: String) {
    let line = format!(
        "{} criterion {id:>2}: {title} | {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    let _ = writeln!(std::io::stderr().lock(), "{line}");
    assert!(ok, "{line}");
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// Test-side oracles, written out independently of the library.

fn oracle_equal_threshold(mu: f64, chi: f64) -> f64 {
    if chi < 2.0 {
        mu * chi * chi / 4.0
    } else {
        mu * (chi - 1.0)
    }
}

fn oracle_upper_bound(mu: f64, c1: f64, c2: f64) -> f64 {
    let a = mu * c2 + mu * (c1 - c2).powi(2) / (4.0 * c2);
    let b = mu * c1 + mu * (c2 - c1).powi(2) / (4.0 * c1);
    a.min(b)
}

fn oracle_f(mu: f64, c1: f64, c2: f64, beta: f64, b: f64) -> f64 {
    let inner = (c2 - b).abs() - beta;
    let num = b * inner * inner + (c1 - c2) * (c1 - c2) * beta;
    mu * (b + beta) + mu * (b + beta) * num / (4.0 * b * beta)
}

fn oracle_q(c1: f64, c2: f64, beta: f64, b: f64) -> f64 {
    let inner = (c2 - b).abs() - beta;
    4.0 * b * beta / (b * inner * inner + (c1 - c2) * (c1 - c2) * beta)
}

fn moment(grid: &Grid, uv: &[f64], e: f64) -> f64 {
    uv.iter().map(|x| x.powf(e)).sum::<f64>() * grid.cell_volume()
}

fn mass(f: &ScalarField) -> f64 {
    f.values().iter().sum::<f64>() * f.grid().cell_volume()
}

fn suite() -> &'static [(&'static str, ScenarioRun)] {
    static SUITE: OnceLock<Vec<(&'static str, ScenarioRun)>> = OnceLock::new();
    SUITE.get_or_init(|| {
        default_scenarios()
            .into_iter()
            .map(|(name, cfg)| (name, run_config(&cfg).expect("default scenario runs")))
            .collect()
    })
}

fn competition_run() -> &'static ScenarioRun {
    &suite()
        .iter()
        .find(|(n, _)| *n == "competition_bumps_1d")
        .expect("competition scenario in suite")
        .1
}

#[test]
fn criterion_01_equal_sensitivity_closed_form() {
    let mut worst = 0.0f64;
    for &chi in &[0.5, 1.0, 1.9, 2.0, 2.1, 3.0, 5.0, 10.0] {
        for &mu in &[0.5, 1.0, 4.0] {
            let r = chi_star(&ThresholdQuery::new(mu, chi, chi)).unwrap();
            worst = worst.max(rel(r.chi_star, oracle_equal_threshold(mu, chi)));
        }
    }
    verdict(
        1,
        "chi_star(mu,chi,chi) closed form",
        worst <= 1e-3,
        format!("24 cases, worst relative error {worst:.3e} (tol 1e-3)"),
    );
}

#[test]
fn criterion_02_upper_bound_on_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_at = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let (mu, c1, c2) = (
            rng.gen_range(0.1..10.0),
            rng.gen_range(0.1..10.0),
            rng.gen_range(0.1..10.0),
        );
        let r = chi_star(&ThresholdQuery::new(mu, c1, c2)).unwrap();
        let excess = r.chi_star - oracle_upper_bound(mu, c1, c2);
        if excess > 1e-9 {
            violations += 1;
        }
        if excess > worst {
            worst = excess;
            worst_at = (mu, c1, c2);
        }
    }
    verdict(
        2,
        "chi_star <= stated upper bound + 1e-9",
        violations == 0,
        format!(
            "{violations}/1000 points exceed the bound; worst excess {worst:.4e} at (mu, chi1, chi2) = ({:.3}, {:.3}, {:.3})",
            worst_at.0, worst_at.1, worst_at.2
        ),
    );
}

#[test]
fn criterion_03_f_q_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 10_000 {
        let lg = |rng: &mut ChaCha8Rng| 10f64.powf(rng.gen_range(-2.0..2.0));
        let (mu, c1, c2, beta, b) = (lg(&mut rng), lg(&mut rng), lg(&mut rng), lg(&mut rng), lg(&mut rng));
        let Ok(q) = q_exponent(c1, c2, beta, b) else { continue };
        let f = eval_f(mu, c1, c2, beta, b).unwrap();
        let via_q = mu * (b + beta) * (1.0 + 1.0 / q);
        worst = worst
            .max(rel(f, via_q))
            .max(rel(f, oracle_f(mu, c1, c2, beta, b)))
            .max(rel(q, oracle_q(c1, c2, beta, b)));
        checked += 1;
    }
    verdict(
        3,
        "f = mu(B+beta)(1+1/q)",
        worst <= 1e-12,
        format!("{checked} points, worst relative gap {worst:.3e} (tol 1e-12)"),
    );
}

fn manufactured_error(dim: usize, n: usize) -> f64 {
    let (lx, ly) = (1.0, 1.5);
    let grid = if dim == 1 {
        build_grid(1, &[lx], &[n]).unwrap()
    } else {
        build_grid(2, &[lx, ly], &[n, n]).unwrap()
    };
    let mut p = ModelParams::uniform(1.0);
    p.mu = 2.0;
    p.nu = 0.5;
    let k2 = if dim == 1 {
        (PI / lx).powi(2)
    } else {
        (PI / lx).powi(2) + (PI / ly).powi(2)
    };
    let shape = |x: [f64; 2]| {
        let c = (PI * x[0] / lx).cos();
        if dim == 1 {
            c
        } else {
            c * (PI * x[1] / ly).cos()
        }
    };
    let exact = |x: [f64; 2]| 4.0 + 0.3 * shape(x);
    // −Δw + μw = νu with v = 0.
    let u = ScalarField::from_fn(grid, |x| (p.mu * exact(x) + k2 * 0.3 * shape(x)) / p.nu).unwrap();
    let w = solve_w(&u, &ScalarField::zeros(grid), &p).unwrap().w;
    let ex = ScalarField::from_fn(grid, exact).unwrap();
    w.values()
        .iter()
        .zip(ex.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[test]
fn criterion_04_elliptic_second_order() {
    let mut ok = true;
    let mut parts = Vec::new();
    for (dim, base) in [(1, 16), (2, 8)] {
        let errs: Vec<f64> = (0..4).map(|k| manufactured_error(dim, base << k)).collect();
        let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        ok &= orders.iter().all(|o| (o - 2.0).abs() <= 0.2);
        parts.push(format!(
            "{dim}D orders [{}]",
            orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>().join(", ")
        ));
    }
    verdict(4, "manufactured-solution order 2.0 +- 0.2", ok, parts.join("; "));
}

fn random_source(rng: &mut ChaCha8Rng, grid: Grid) -> ScalarField {
    let n = grid.len();
    let vals: Vec<f64> = match rng.gen_range(0..3) {
        0 => (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        1 => {
            let mut v = vec![0.0; n];
            v[rng.gen_range(0..n)] = rng.gen_range(0.1..10.0);
            v
        }
        _ => (0..n)
            .map(|_| {
                if rng.gen_bool(0.05) {
                    rng.gen_range(0.0..5.0)
                } else {
                    0.0
                }
            })
            .collect(),
    };
    ScalarField::new(grid, vals).unwrap()
}

#[test]
fn criterion_05_discrete_signal_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = ModelParams::uniform(1.0);
    p.mu = 1.5;
    p.lambda = 0.7;
    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for grid in [
        build_grid(1, &[1.0], &[200]).unwrap(),
        build_grid(2, &[1.0, 1.0], &[32, 32]).unwrap(),
    ] {
        let d0 = discrete_delta0(&grid, &p).unwrap();
        for _ in 0..100 {
            let u = random_source(&mut rng, grid);
            let v = random_source(&mut rng, grid);
            if mass(&u) + mass(&v) == 0.0 {
                continue;
            }
            let w = solve_w(&u, &v, &p).unwrap().w;
            worst = worst.min(w.min() - d0 * (mass(&u) + mass(&v)));
        }
        parts.push(format!("{}D delta0 = {d0:.6e}", grid.dim()));
    }
    verdict(
        5,
        "min w - delta0 * mass(u+v) >= -1e-12",
        worst >= -1e-12,
        format!("{}; worst margin {worst:.3e} over 200 sources", parts.join(", ")),
    );
}

#[test]
fn criterion_06_dirichlet_quotient_bound() {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, run) in suite() {
        let cfg = default_scenario(name).unwrap();
        let g = cfg.build_grid().unwrap();
        let bound = cfg.params.mu * g.volume() * 1.05;
        let dq = run.summary.stats.max_dirichlet_quotient;
        ok &= dq <= bound && run.summary.stats.w_solves > 0;
        parts.push(format!(
            "{name} {dq:.3e}/{bound:.3e} ({} solves)",
            run.summary.stats.w_solves
        ));
    }
    verdict(
        6,
        "Dirichlet quotient <= 1.05 mu|Omega| on every solve",
        ok,
        parts.join("; "),
    );
}

#[test]
fn criterion_07_mass_supersolution() {
    let cfg = default_scenario("competition_bumps_1d").unwrap();
    assert_eq!(cfg.grid.cells, vec![128]);
    assert_eq!(cfg.t_final, 100.0);
    assert_eq!(cfg.params, ModelParams::uniform(1.0));
    let run = competition_run();
    let recs = run.outcome.trajectory.records();
    let vol = cfg.build_grid().unwrap().volume();
    let cap = cfg.params.a1 * vol / cfg.params.b1;
    let bound = recs[0].mass_u.max(cap) * 1.05;
    let peak = recs.iter().map(|r| r.mass_u).fold(0.0, f64::max);
    let tail: Vec<f64> = recs.iter().filter(|r| r.t >= 50.0).map(|r| r.mass_u).collect();
    let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let ok = run.summary.stop == StopReason::ReachedFinalTime && peak <= bound && tail_mean <= cap * 1.05;
    verdict(
        7,
        "mass of u below max{initial, a1|Omega|/b1} * 1.05",
        ok,
        format!(
            "peak {peak:.6e} vs {bound:.6e}; tail mean {tail_mean:.6e} vs {:.6e}",
            cap * 1.05
        ),
    );
}

#[test]
fn criterion_08_negative_moment_ode() {
    let run = competition_run();
    let th = run.summary.threshold;
    let p = ModelParams::uniform(1.0);
    let (c1, c2) = match th.branch {
        Branch::Chi1Star => (p.chi1, p.chi2),
        Branch::Chi2Star => (p.chi2, p.chi1),
    };
    let q = oracle_q(c1, c2, th.beta, th.b);
    let f = oracle_f(p.mu, c1, c2, th.beta, th.b);
    let traj = &run.outcome.trajectory;
    let grid = *traj.grid();
    let recs = traj.records();
    let n: Vec<f64> = (0..recs.len()).map(|k| moment(&grid, traj.density(k), -q)).collect();
    let pm: Vec<f64> = (0..recs.len())
        .map(|k| moment(&grid, traj.density(k), 1.0 - q))
        .collect();
    let a_min = p.a1.min(p.a2);
    let comp = p.b1.max(p.b2) + p.c1.max(p.c2);
    let mut worst = f64::INFINITY;
    for k in 0..recs.len() - 1 {
        let dt = recs[k + 1].t - recs[k].t;
        let lhs = (n[k + 1] - n[k]) / (q * dt);
        let rhs = 0.5 * ((f - a_min) * (n[k] + n[k + 1]) + comp * (pm[k] + pm[k + 1]));
        let scale = 0.5 * ((f - a_min).abs() * (n[k] + n[k + 1]) + comp * (pm[k] + pm[k + 1]));
        worst = worst.min((rhs + 0.05 * scale - lhs) / scale);
    }
    let lib = run.summary.check("negative_moment_ode").unwrap();
    verdict(
        8,
        "negative-moment differential inequality within 5% band",
        worst >= 0.0 && lib.passed(),
        format!(
            "q = {q:.4e}, f = {f:.6e}, {} intervals, worst relative margin {worst:.3e}; library check {:?}",
            recs.len() - 1,
            lib.status
        ),
    );
}

#[test]
fn criterion_09_decay_envelope() {
    let run = competition_run();
    let wit = run.summary.witness.expect("witness exists at eps0 = 0.75");
    let eps = run.summary.threshold.margin.unwrap();
    let p = ModelParams::uniform(1.0);
    let traj = &run.outcome.trajectory;
    let grid = *traj.grid();
    let vol = grid.volume();
    let recs = traj.records();
    let q = wit.q;
    let n: Vec<f64> = (0..recs.len()).map(|k| moment(&grid, traj.density(k), -q)).collect();
    let comp = p.b1.max(p.b2) + p.c1.max(p.c2);
    let mut worst = f64::INFINITY;
    // Every record serves as an anchor.
    for a in 0..recs.len() {
        let m_star = recs[a].mass_u.max(p.a1 * vol / p.b1) + recs[a].mass_v.max(p.a2 * vol / p.b2);
        let c_tau = comp * vol.powf(q) * m_star.powf(1.0 - q);
        for k in a..recs.len() {
            let env = (-eps * q * (recs[k].t - recs[a].t) / 2.0).exp() * n[a] + 2.0 * q * c_tau / eps;
            worst = worst.min((env * 1.05 - n[k]) / (env * 1.05));
        }
    }
    let lib = run.summary.check("negative_moment_decay").unwrap();
    let ok = (eps - 0.75).abs() < 1e-3 && q < 1.0 && worst >= 0.0 && lib.passed();
    verdict(
        9,
        "q < 1 decay envelope within 5% band",
        ok,
        format!(
            "eps0 = {eps:.6}, q = {q:.6}, {} anchors, worst relative margin {worst:.3e}; library check {:?}",
            recs.len(),
            lib.status
        ),
    );
}

#[test]
fn criterion_10_pointwise_persistence() {
    let base = default_scenario("bumps_2d").unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 1..=5u64 {
        let mut cfg = base.clone();
        cfg.initial.u = FieldSpec::RandomBumps {
            seed: 100 + seed,
            count: 4,
            amplitude: 2.0,
            background: 0.02,
        };
        cfg.initial.v = FieldSpec::RandomBumps {
            seed: 200 + seed,
            count: 4,
            amplitude: 2.0,
            background: 0.02,
        };
        let run = run_config(&cfg).unwrap();
        let recs = run.outcome.trajectory.records();
        let tail: Vec<f64> = recs.iter().filter(|r| r.t >= 50.0).map(|r| r.min_uv).collect();
        let m0 = tail.iter().copied().fold(f64::INFINITY, f64::min);
        let top = tail.iter().copied().fold(0.0, f64::max);
        let variation = (top - m0) / top;
        ok &= run.summary.stop == StopReason::ReachedFinalTime && m0 > 0.0 && variation < 0.1;
        parts.push(format!("seed {seed}: M0* {m0:.4e}, variation {variation:.2e}"));
    }

    let control = default_scenario("coexistence_homogeneous").unwrap();
    let p = control.params;
    let det = p.b1 * p.b2 - p.c1 * p.c2;
    let u_eq = (p.a1 * p.b2 - p.c1 * p.a2) / det;
    let v_eq = (p.a2 * p.b1 - p.c2 * p.a1) / det;
    let run = run_config(&control).unwrap();
    let s = &run.outcome.state;
    let dev =
        s.u.values()
            .iter()
            .map(|x| (x - u_eq).abs())
            .chain(s.v.values().iter().map(|x| (x - v_eq).abs()))
            .fold(0.0, f64::max);
    ok &= dev <= 1e-6;
    parts.push(format!(
        "control (u*, v*) = ({u_eq:.6}, {v_eq:.6}), max deviation {dev:.3e}"
    ));
    verdict(10, "positive and stable min(u+v) on [50, 100]", ok, parts.join("; "));
}

#[test]
fn criterion_11_global_existence_surrogate() {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, run) in suite() {
        let s = &run.summary;
        ok &= s.stop == StopReason::ReachedFinalTime && s.final_time == 100.0;
        parts.push(format!("{name}: {} at t = {}", s.stop, s.final_time));
    }
    verdict(11, "every default scenario reaches t = 100", ok, parts.join("; "));
}

#[test]
fn criterion_12_pure_diffusion_conserves_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for grid in [
        build_grid(1, &[1.0], &[64]).unwrap(),
        build_grid(2, &[1.0, 0.5], &[16, 8]).unwrap(),
    ] {
        let mut sim = Simulator::new(grid, ModelParams::uniform(1.0), StepControl::with_dt_max(0.01)).unwrap();
        sim.set_chemotaxis(false);
        sim.set_reactions(false);
        let u0 = ScalarField::new(grid, (0..grid.len()).map(|_| rng.gen_range(0.1..3.0)).collect()).unwrap();
        let v0 = ScalarField::new(grid, (0..grid.len()).map(|_| rng.gen_range(0.1..3.0)).collect()).unwrap();
        let mut state = sim.initial_state(u0, v0, false).unwrap();
        for _ in 0..10_000 {
            let next = sim.step(&state, 0.01).unwrap();
            worst = worst
                .max(rel(mass(&next.u), mass(&state.u)))
                .max(rel(mass(&next.v), mass(&state.v)));
            state = next;
        }
        parts.push(format!("{}D to t = {:.2}", grid.dim(), state.t));
    }
    verdict(
        12,
        "per-step mass drift <= 1e-12 with kinetics and drift off",
        worst <= 1e-12,
        format!("{}; worst drift {worst:.3e} over 10^4 steps", parts.join(", ")),
    );
}
