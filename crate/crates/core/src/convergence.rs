//! Calculators for the convergence analysis of federated actor mixing:
//! the mixing spectrum, the learning-rate feasibility polynomial, the
//! three-term error bound and empirical gradient statistics from run logs.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::trainer::{validate_omega, FederatedUpdater, MetricsLog, TrainConfig};

/// Constants of the bound for one federated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceParams {
    pub n_edges: usize,
    pub omega: f64,
    /// Epochs between federated steps.
    pub fed_period: u64,
    pub eta: f64,
    pub l_max: f64,
    /// SGD variance growth coefficient.
    pub c: f64,
    pub sigma_max: f64,
    /// Per-agent gradient noise levels.
    pub agent_sigma: Vec<f64>,
    /// Per-agent smoothness constants.
    pub agent_lipschitz: Vec<f64>,
    pub batch: usize,
    pub t0: u64,
    pub horizon: u64,
    /// Summed excess loss of the agents at `t0`.
    pub initial_gap: f64,
}

impl ConvergenceParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_edges < 2 {
            return Err(Error::config("n_edges", "must be >= 2"));
        }
        validate_omega(self.omega, self.n_edges)?;
        let positive = [("eta", self.eta), ("l_max", self.l_max)];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, "must be > 0"));
            }
        }
        if self.batch == 0 {
            return Err(Error::config("batch", "must be > 0"));
        }
        if self.fed_period == 0 {
            return Err(Error::config("fed_period", "must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be >= 1"));
        }
        let nonneg = [("c", self.c), ("sigma_max", self.sigma_max), ("initial_gap", self.initial_gap)];
        for (field, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be finite and >= 0"));
            }
        }
        for (field, v) in [("agent_sigma", &self.agent_sigma), ("agent_lipschitz", &self.agent_lipschitz)] {
            if v.len() != self.n_edges {
                return Err(Error::config(field, format!("needs {} entries, got {}", self.n_edges, v.len())));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::config(field, "entries must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn zeta(&self) -> f64 {
        (self.n_edges as f64 * self.omega - 1.0) / (self.n_edges as f64 - 1.0)
    }
}

/// Second largest eigenvalue of the mixing matrix, `(n_e * omega - 1) / (n_e - 1)`.
pub fn zeta(omega: f64, n_edges: usize) -> Result<f64> {
    if n_edges < 2 {
        return Err(Error::config("n_edges", "must be >= 2"));
    }
    Ok((n_edges as f64 * omega - 1.0) / (n_edges as f64 - 1.0))
}

/// Numeric and closed-form eigenvalues of the mixing matrix, both sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub numeric: Vec<f64>,
    pub analytic: Vec<f64>,
}

impl Spectrum {
    pub fn max_abs_error(&self) -> f64 {
        self.numeric.iter().zip(&self.analytic).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Eigenvalues of the mixing matrix from a dense symmetric solver, next to
/// the closed form `{1, zeta, ..., zeta}`.
pub fn omega_spectrum(omega: f64, n_edges: usize) -> Result<Spectrum> {
    let z = zeta(omega, n_edges)?;
    let rows = FederatedUpdater::new(n_edges, omega)?.matrix();
    let m = DMatrix::from_fn(n_edges, n_edges, |i, j| rows[i][j]);
    let mut numeric: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    numeric.sort_by(|a, b| b.total_cmp(a));
    let mut analytic = vec![z; n_edges];
    analytic[0] = 1.0;
    analytic.sort_by(|a, b| b.total_cmp(a));
    Ok(Spectrum { numeric, analytic })
}

/// `(a, b)` with `Gamma(eta) = a eta^2 + b eta - 1`, or `None` when `zeta >= 1`.
pub fn gamma_coefficients(p: &ConvergenceParams) -> Option<(f64, f64)> {
    let z = p.zeta();
    if z >= 1.0 {
        return None;
    }
    let ef = p.fed_period as f64;
    let l2 = p.l_max * p.l_max;
    let a = 2.0 * p.c * ef * l2 / (1.0 - z * z)
        + ef * ef * l2 / (1.0 - z) * (4.0 * z / (1.0 - z * z) + (ef - 1.0) / ef);
    Some((a, p.l_max * (p.c + 1.0)))
}

/// Learning-rate feasibility polynomial; `+inf` without mixing (`omega = 1`).
pub fn gamma_poly(eta: f64, p: &ConvergenceParams) -> f64 {
    match gamma_coefficients(p) {
        Some((a, b)) => a * eta * eta + b * eta - 1.0,
        None => f64::INFINITY,
    }
}

/// Largest learning rate with `Gamma <= 0`, or `None` when no rate is feasible.
pub fn feasible_eta(p: &ConvergenceParams) -> Option<f64> {
    let (a, b) = gamma_coefficients(p)?;
    // Positive root written to avoid cancellation when a is small.
    Some(2.0 / (b + (b * b + 4.0 * a).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    pub total: f64,
    pub initial_dev: f64,
    pub sequel_dev: f64,
    pub fed_dev: f64,
    /// Whether `eta` satisfies the feasibility condition; the bound is only
    /// guaranteed when it does.
    pub eta_feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Bounded(BoundTerms),
    /// No mixing between edges: the bound does not exist.
    Unbounded,
}

impl Bound {
    pub fn total(&self) -> f64 {
        match self {
            Bound::Bounded(t) => t.total,
            Bound::Unbounded => f64::INFINITY,
        }
    }
}

/// Time-averaged gradient bound split into its initial, sequel and federated parts.
pub fn lambda_bound(p: &ConvergenceParams) -> Result<Bound> {
    p.validate()?;
    let z = p.zeta();
    if z * z >= 1.0 {
        return Ok(Bound::Unbounded);
    }
    let n = p.n_edges as f64;
    let b = p.batch as f64;
    let initial_dev = 2.0 * p.initial_gap / (p.eta * n * p.horizon as f64);
    let sequel_dev = p.eta / (n * b)
        * p.agent_lipschitz.iter().zip(&p.agent_sigma).map(|(l, s)| l * s * s).sum::<f64>();
    let fed_dev = fed_term(p.eta, p.sigma_max, p.l_max, b, p.fed_period as f64, z);
    Ok(Bound::Bounded(BoundTerms {
        total: initial_dev + sequel_dev + fed_dev,
        initial_dev,
        sequel_dev,
        fed_dev,
        eta_feasible: gamma_poly(p.eta, p) <= 0.0,
    }))
}

fn fed_term(eta: f64, sigma: f64, l: f64, batch: f64, ef: f64, z: f64) -> f64 {
    eta * eta * sigma * sigma * l * l / (2.0 * batch) * ((1.0 + z * z) / (1.0 - z * z) * ef - 1.0)
}

/// Mean of `grads[t][k]` over agents and the epochs `t0 + 1 ..= t0 + horizon`.
///
/// Row `t` of `grads` belongs to epoch `t + 1`; every entry in the window must be present.
pub fn grad_time_average(grads: &[Vec<Option<f64>>], t0: usize, horizon: usize) -> Result<f64> {
    if horizon == 0 || grads.len() < t0 + horizon {
        return Err(Error::InsufficientData { needed: t0 + horizon.max(1), available: grads.len() });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for row in &grads[t0..t0 + horizon] {
        for g in row {
            sum += g.ok_or(Error::InsufficientData { needed: t0 + horizon, available: t0 })?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptySeries);
    }
    Ok(sum / count as f64)
}

/// First epoch whose trailing `window` mean lies within `tol` (relative) of
/// the final trailing mean. `None` for runs shorter than `window`.
pub fn convergence_epoch(avg_ages: &[f64], window: usize, tol: f64) -> Option<u64> {
    if window == 0 || avg_ages.len() < window {
        return None;
    }
    let mut sums = Vec::with_capacity(avg_ages.len() - window + 1);
    let mut s: f64 = avg_ages[..window].iter().sum();
    sums.push(s);
    for i in window..avg_ages.len() {
        s += avg_ages[i] - avg_ages[i - window];
        sums.push(s);
    }
    let fin = *sums.last()? / window as f64;
    sums.iter()
        .position(|s| (s / window as f64 - fin).abs() <= tol * fin.abs())
        .map(|i| (i + window) as u64)
}

/// One trained run entering the report.
#[derive(Debug, Clone, Copy)]
pub struct RunLog<'a> {
    pub cfg: &'a TrainConfig,
    pub log: &'a MetricsLog,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    /// Trailing window for the convergence epoch.
    pub window: usize,
    /// Relative tolerance for the convergence epoch.
    pub tol: f64,
    /// Plug-in value of the variance growth coefficient.
    pub c: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { window: 200, tol: 0.05, c: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub omega: f64,
    pub zeta: f64,
    pub grad_avg: f64,
    pub convergence_epoch: Option<u64>,
    pub final_trailing: f64,
    pub eta_star: Option<f64>,
    pub bound: Bound,
}

/// Measured statistics and plug-in bounds for a set of runs that differ only in `omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
    /// Constants shared by every row's bound.
    pub l_max: f64,
    pub sigma_max: f64,
    pub initial_gap: f64,
    pub t0: u64,
    pub horizon: u64,
}

/// Builds the report. Constants are estimated jointly from all runs: the
/// smoothness from finite-difference gradient slopes, noise from batch
/// gradient variance, and the initial gap from the actor loss drop.
pub fn empirical_vs_bound_report(runs: &[RunLog<'_>], n_edges: usize, opts: ReportOptions) -> Result<ConvergenceReport> {
    let first = runs.first().ok_or(Error::EmptySeries)?;
    for r in runs {
        let same = TrainConfig { omega: first.cfg.omega, ..r.cfg.clone() };
        if &same != first.cfg {
            return Err(Error::config("runs", "runs must share every setting except omega"));
        }
    }
    let edge_idx: Vec<usize> = (0..n_edges).collect();
    let len = runs.iter().map(|r| r.log.records.len()).min().unwrap_or(0);
    let warm = |r: &RunLog| r.log.records.iter().position(|e| edge_idx.iter().all(|&k| e.agents.get(k).is_some_and(Option::is_some)));
    let t0 = runs.iter().map(|r| warm(r).unwrap_or(len)).max().unwrap_or(len);
    if t0 >= len {
        return Err(Error::InsufficientData { needed: t0 + 1, available: len });
    }
    let horizon = len - t0;

    let mut agent_l = vec![0.0f64; n_edges];
    let mut agent_var = vec![0.0f64; n_edges];
    let mut initial_gap = 0.0f64;
    for r in runs {
        let window = &r.log.records[t0..len];
        let mut gap = 0.0;
        for k in 0..n_edges {
            let stats: Vec<_> = window.iter().filter_map(|e| e.agents[k]).collect();
            for s in &stats {
                if let Some(l) = s.lipschitz.filter(|l| l.is_finite()) {
                    agent_l[k] = agent_l[k].max(l);
                }
            }
            let var = stats.iter().map(|s| s.grad_var).sum::<f64>() / stats.len() as f64;
            agent_var[k] = agent_var[k].max(var);
            let start = stats[0].actor_loss;
            let best = stats.iter().map(|s| s.actor_loss).fold(f64::INFINITY, f64::min);
            gap += start - best;
        }
        initial_gap = initial_gap.max(gap);
    }
    let l_max = agent_l.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let sigma_max = agent_var.iter().copied().fold(0.0, f64::max).sqrt();

    let rows = runs
        .iter()
        .map(|r| {
            let p = ConvergenceParams {
                n_edges,
                omega: r.cfg.omega,
                fed_period: r.cfg.fed_period,
                eta: r.cfg.lr_actor,
                l_max,
                c: opts.c,
                sigma_max,
                agent_sigma: agent_var.iter().map(|v| v.sqrt()).collect(),
                agent_lipschitz: agent_l.clone(),
                batch: r.cfg.batch,
                t0: t0 as u64,
                horizon: horizon as u64,
                initial_gap,
            };
            let ages = r.log.avg_ages();
            Ok(ReportRow {
                omega: r.cfg.omega,
                zeta: p.zeta(),
                grad_avg: grad_time_average(&r.log.grad_norms("edge"), t0, horizon)?,
                convergence_epoch: convergence_epoch(&ages[..len], opts.window, opts.tol),
                final_trailing: r.log.trailing_mean(opts.window).unwrap_or(f64::NAN),
                eta_star: feasible_eta(&p),
                bound: lambda_bound(&p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport { rows, l_max, sigma_max, initial_gap, t0: t0 as u64, horizon: horizon as u64 })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "omega,zeta,grad_time_avg,convergence_epoch,final_trailing_age,eta_star,eta_feasible,bound_total,bound_initial,bound_sequel,bound_fed\n",
        );
        for r in &self.rows {
            let bound = match r.bound {
                Bound::Bounded(t) => format!("{},{},{},{},{}", t.eta_feasible, t.total, t.initial_dev, t.sequel_dev, t.fed_dev),
                Bound::Unbounded => "false,inf,,,".to_string(),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.omega,
                r.zeta,
                r.grad_avg,
                opt(r.convergence_epoch),
                r.final_trailing,
                opt(r.eta_star),
                bound
            )
            .unwrap();
        }
        out
    }

    /// Fixed-width table for terminals; bound values are plug-in estimates.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "plug-in constants: L_max={:.4e} sigma_max={:.4e} initial_gap={:.4e} window=[{}, {}]",
            self.l_max,
            self.sigma_max,
            self.initial_gap,
            self.t0 + 1,
            self.t0 + self.horizon
        )
        .unwrap();
        writeln!(
            out,
            "{:>7} {:>7} {:>12} {:>9} {:>11} {:>11} {:>12}",
            "omega", "zeta", "grad_avg", "conv_ep", "final_age", "eta_star", "bound"
        )
        .unwrap();
        for r in &self.rows {
            let bound = match r.bound {
                Bound::Bounded(t) if t.eta_feasible => format!("{:.4e}", t.total),
                Bound::Bounded(t) => format!("{:.4e}*", t.total),
                Bound::Unbounded => "unbounded".to_string(),
            };
            writeln!(
                out,
                "{:>7.4} {:>7.4} {:>12.4e} {:>9} {:>11.2} {:>11} {:>12}",
                r.omega,
                r.zeta,
                r.grad_avg,
                r.convergence_epoch.map_or("-".into(), |e| e.to_string()),
                r.final_trailing,
                r.eta_star.map_or("-".into(), |e| format!("{e:.3e}")),
                bound
            )
            .unwrap();
        }
        if self.rows.iter().any(|r| matches!(r.bound, Bound::Bounded(t) if !t.eta_feasible)) {
            out.push_str("* learning rate above the feasible threshold; bound not guaranteed\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(omega: f64) -> ConvergenceParams {
        ConvergenceParams {
            n_edges: 4,
            omega,
            fed_period: 8,
            eta: 1e-3,
            l_max: 2.0,
            c: 0.5,
            sigma_max: 1.5,
            agent_sigma: vec![1.0, 1.5, 0.5, 1.2],
            agent_lipschitz: vec![1.0, 2.0, 1.5, 0.7],
            batch: 32,
            t0: 0,
            horizon: 1000,
            initial_gap: 3.0,
        }
    }

    #[test]
    fn zeta_closed_form_points() {
        assert_eq!(zeta(1.0, 4).unwrap(), 1.0);
        assert_eq!(zeta(0.25, 4).unwrap(), 0.0);
        assert!((zeta(0.5, 4).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(zeta(0.5, 1).is_err());
    }

    #[test]
    fn identity_spectrum_at_omega_one() {
        let s = omega_spectrum(1.0, 5).unwrap();
        assert!(s.numeric.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn gamma_at_zero_and_sentinel() {
        assert_eq!(gamma_poly(0.0, &params(0.5)), -1.0);
        assert_eq!(gamma_poly(0.1, &params(1.0)), f64::INFINITY);
        assert!(feasible_eta(&params(1.0)).is_none());
    }

    #[test]
    fn zeta_zero_fed_term_matches_substitution() {
        let p = params(0.25);
        let Bound::Bounded(t) = lambda_bound(&p).unwrap() else { panic!("bounded expected") };
        let expect = p.eta * p.eta * p.sigma_max.powi(2) * p.l_max.powi(2) / (2.0 * 32.0) * (8.0 - 1.0);
        assert!((t.fed_dev - expect).abs() < 1e-18);
        assert_eq!(t.total, t.initial_dev + t.sequel_dev + t.fed_dev);
    }

    #[test]
    fn no_mixing_is_unbounded() {
        assert_eq!(lambda_bound(&params(1.0)).unwrap(), Bound::Unbounded);
    }

    #[test]
    fn long_horizon_kills_initial_term() {
        let mut p = params(0.5);
        p.horizon = u64::MAX / 4;
        let Bound::Bounded(t) = lambda_bound(&p).unwrap() else { panic!("bounded expected") };
        assert!(t.initial_dev < 1e-12);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = params(0.5);
        p.agent_sigma.pop();
        assert!(lambda_bound(&p).is_err());
        assert!(lambda_bound(&ConvergenceParams { omega: 0.1, ..params(0.5) }).is_err());
        assert!(lambda_bound(&ConvergenceParams { eta: 0.0, ..params(0.5) }).is_err());
    }

    #[test]
    fn grad_average_edge_cases() {
        let zeros = vec![vec![Some(0.0); 3]; 10];
        assert_eq!(grad_time_average(&zeros, 2, 5).unwrap(), 0.0);
        let c = vec![vec![Some(2.5); 4]; 10];
        assert_eq!(grad_time_average(&c, 0, 10).unwrap(), 2.5);
        assert!(grad_time_average(&c, 5, 6).is_err());
        let mut gap = c.clone();
        gap[3][1] = None;
        assert!(grad_time_average(&gap, 0, 10).is_err());
        assert!(grad_time_average(&gap, 4, 6).is_ok());
    }

    #[test]
    fn convergence_epoch_on_step_series() {
        // 300 epochs at 100 then 500 at 10: the trailing mean 10 + 0.45 j with
        // j entries of 100 left in the window is within 0.5 of 10 once j <= 1.
        let mut s = vec![100.0; 300];
        s.extend(vec![10.0; 500]);
        assert_eq!(convergence_epoch(&s, 200, 0.05), Some(499));
        assert_eq!(convergence_epoch(&s[..100], 200, 0.05), None);
        assert_eq!(convergence_epoch(&vec![3.0; 250], 200, 0.05), Some(200));
    }
}
