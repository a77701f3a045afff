//! Numeric battery over the convergence calculators.

use std::fmt::Write as _;

use edgefed_core::convergence::{
    feasible_eta, gamma_poly, lambda_bound, omega_spectrum, Bound, ConvergenceParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Random bound parameters with a mixing factor strictly below one.
pub fn random_params(rng: &mut ChaCha8Rng) -> ConvergenceParams {
    let n_edges = rng.random_range(2..=8usize);
    let lo = 1.0 / n_edges as f64;
    ConvergenceParams {
        n_edges,
        omega: rng.random_range(lo..0.95),
        fed_period: rng.random_range(1..=16),
        eta: 10f64.powf(rng.random_range(-4.0..-1.0)),
        l_max: rng.random_range(0.1..10.0),
        c: rng.random_range(0.0..2.0),
        sigma_max: rng.random_range(0.0..5.0),
        agent_sigma: (0..n_edges).map(|_| rng.random_range(0.0..5.0)).collect(),
        agent_lipschitz: (0..n_edges).map(|_| rng.random_range(0.1..10.0)).collect(),
        batch: rng.random_range(16..=256),
        t0: 0,
        horizon: rng.random_range(100..=10_000),
        initial_gap: rng.random_range(0.0..100.0),
    }
}

/// Root of an increasing function on `[lo, hi]` by bisection.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn with_zeta(p: &ConvergenceParams, zeta: f64) -> ConvergenceParams {
    let n = p.n_edges as f64;
    ConvergenceParams { omega: (zeta * (n - 1.0) + 1.0) / n, ..p.clone() }
}

fn fed_dev(p: &ConvergenceParams) -> f64 {
    match lambda_bound(p) {
        Ok(Bound::Bounded(t)) => t.fed_dev,
        _ => f64::NAN,
    }
}

/// Runs every check; `draws` random parameter sets feed the randomized ones.
pub fn run_battery(seed: u64, draws: usize) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<_> = (0..draws).map(|_| random_params(&mut rng)).collect();
    let mut checks = Vec::new();

    let mut worst = 0.0f64;
    for n in 2..=10usize {
        for k in 0..=40 {
            let omega = (k as f64 / 40.0).max(1.0 / n as f64);
            worst = worst.max(omega_spectrum(omega, n).map(|s| s.max_abs_error()).unwrap_or(f64::INFINITY));
        }
    }
    checks.push(Check {
        name: "spectrum_matches_closed_form",
        passed: worst <= 1e-10,
        detail: format!("max |numeric - closed form| = {worst:.3e} over n_e 2..10"),
    });

    let g0 = params.iter().map(|p| (gamma_poly(0.0, p) + 1.0).abs()).fold(0.0, f64::max);
    checks.push(Check { name: "gamma_at_zero_is_minus_one", passed: g0 == 0.0, detail: format!("max |Gamma(0) + 1| = {g0:.3e}") });

    let mut eta_err = 0.0f64;
    for p in &params {
        let closed = feasible_eta(p).unwrap_or(f64::NAN);
        let hi = 1.0 / (p.l_max * (p.c + 1.0));
        let root = bisect(|e| gamma_poly(e, p), 0.0, hi);
        eta_err = eta_err.max(((closed - root) / root).abs());
    }
    checks.push(Check {
        name: "eta_star_matches_bisection",
        passed: eta_err <= 1e-9,
        detail: format!("max relative gap = {eta_err:.3e} over {draws} draws"),
    });

    let mut fed_ok = true;
    for p in &params {
        let at_zero = fed_dev(&with_zeta(p, 0.0));
        for k in 1..20 {
            let other = fed_dev(&with_zeta(p, k as f64 * 0.05));
            fed_ok &= at_zero <= other;
        }
    }
    checks.push(Check {
        name: "federated_term_minimized_at_zeta_zero",
        passed: fed_ok,
        detail: format!("zeta grid 0..0.95 over {draws} draws"),
    });

    let unbounded = params.iter().all(|p| {
        let q = ConvergenceParams { omega: 1.0, ..p.clone() };
        matches!(lambda_bound(&q), Ok(Bound::Unbounded)) && feasible_eta(&q).is_none()
    });
    checks.push(Check { name: "omega_one_is_unbounded", passed: unbounded, detail: "no mixing between edges".into() });

    let decays = params.iter().all(|p| {
        let longer = ConvergenceParams { horizon: p.horizon * 10, ..p.clone() };
        match (lambda_bound(p), lambda_bound(&longer)) {
            (Ok(Bound::Bounded(a)), Ok(Bound::Bounded(b))) => b.initial_dev <= a.initial_dev,
            _ => false,
        }
    });
    checks.push(Check { name: "initial_term_decays_with_horizon", passed: decays, detail: "horizon x10".into() });
    checks
}

pub fn checks_csv(checks: &[Check]) -> String {
    let mut out = String::from("check,passed,detail\n");
    for c in checks {
        writeln!(out, "{},{},\"{}\"", c.name, c.passed, c.detail.replace('"', "'")).unwrap();
    }
    out
}

pub fn checks_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{mark}  {:<width$}  {}", c.name, c.detail).unwrap();
    }
    out
}
