//! Tikhonov regularization: the viscosity path `x_ε`, condition diagnostics,
//! the rate function `R(s)` and minimum-norm selection runs.
//!
//! The regularized objective is `F_ε(x) = F(x) + (ε/2)|x|²`; its minimizers
//! approach the minimum-norm solution `x⋆ = proj_S(0)` as `ε → 0`.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::analysis::{log_spaced_indices, monte_carlo};
use crate::error::{Error, Result};
use crate::problems::CompositeProblem;
use crate::quadrature::{integrate, Tolerance};
use crate::schedules::{
    DampingSchedule, Diffusion, DiffusionSchedule, ScaleTable, TikhonovSchedule,
};
use crate::sde::{BrownianPath, InertialSystem, TimeGrid};
use crate::{solvers, Vector};

/// Optimality tolerance of [`reg_minimizer`].
pub const REG_TOLERANCE: f64 = 1e-10;

/// The unique minimizer of `F + (ε/2)|·|²`.
///
/// Quadratics solve `(A + εI)x = b` by Cholesky. Everything else runs
/// accelerated proximal gradient on the strongly convex smooth part
/// `f + (ε/2)|·|²` with the prox of `g`, until the gradient mapping is below
/// [`REG_TOLERANCE`]. Note that this is the minimizer of `F_ε` itself, not of
/// its Moreau-smoothed surrogate.
pub fn reg_minimizer(problem: &CompositeProblem, eps: f64) -> Result<Vector> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::config(
            "eps",
            format!("regularization must be positive, got {eps}"),
        ));
    }
    let f = problem.smooth_part();
    let g = problem.nonsmooth_part();
    if let (Some(q), None) = (f.as_quadratic(), g) {
        let n = q.matrix().nrows();
        let m = q.matrix() + crate::Matrix::identity(n, n) * eps;
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Numeric("Cholesky factorization of A + εI failed".into()))?;
        return Ok(chol.solve(q.linear_term()));
    }
    let sol = solvers::accelerated_prox_grad(
        |x| f.gradient(x) + eps * x,
        |s, x| match g {
            Some(g) => g.prox(s, x),
            None => x.clone(),
        },
        f.lipschitz() + eps,
        Vector::zeros(problem.dim()),
        REG_TOLERANCE,
        5_000_000,
    )?;
    log::debug!(
        "reg_minimizer(ε = {eps:e}): residual {:e} after {} iterations",
        sol.residual,
        sol.iterations
    );
    Ok(sol.x)
}

/// Norm of the optimality residual of `x` for `F_ε`: `|∇f + εx|` for smooth
/// problems, the proximal gradient mapping with unit step otherwise.
pub fn reg_residual(problem: &CompositeProblem, eps: f64, x: &Vector) -> f64 {
    let grad = problem.smooth_part().gradient(x) + eps * x;
    match problem.nonsmooth_part() {
        None => grad.norm(),
        Some(g) => (x - g.prox(1.0, &(x - &grad))).norm(),
    }
}

/// `x⋆ = proj_S(0)`, when the solution set is available in closed form.
pub fn min_norm_solution(problem: &CompositeProblem) -> Result<Vector> {
    problem.min_norm_solution().ok_or_else(|| {
        Error::DegenerateFixture(
            "the minimum-norm solution is not available for this problem".into(),
        )
    })
}

/// Samples of the viscosity path `ε ↦ x_ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationPath {
    /// Strictly decreasing regularization values.
    pub epsilons: Vec<f64>,
    pub x_eps: Vec<Vector>,
    pub x_star: Vector,
}

impl RegularizationPath {
    /// Solves for `x_ε` at every `ε` (concurrently). The values are sorted
    /// in decreasing order.
    pub fn sample(problem: &CompositeProblem, epsilons: &[f64]) -> Result<Self> {
        let x_star = min_norm_solution(problem)?;
        let mut epsilons = epsilons.to_vec();
        epsilons.sort_by(|a, b| b.total_cmp(a));
        epsilons.dedup();
        let x_eps = epsilons
            .par_iter()
            .map(|&e| reg_minimizer(problem, e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            epsilons,
            x_eps,
            x_star,
        })
    }

    /// `|x_ε| <= |x⋆|` at every sample (up to `tol`).
    pub fn bounded_by_min_norm(&self, tol: f64) -> bool {
        let bound = self.x_star.norm();
        self.x_eps.iter().all(|x| x.norm() <= bound + tol)
    }

    /// `|x_ε|` is non-decreasing and `|x_ε - x⋆|` non-increasing as `ε` decreases.
    pub fn monotone(&self, tol: f64) -> bool {
        self.x_eps.windows(2).all(|w| {
            w[1].norm() + tol >= w[0].norm()
                && (&w[1] - &self.x_star).norm() <= (&w[0] - &self.x_star).norm() + tol
        })
    }
}

/// Finite-horizon diagnostics of the Tikhonov conditions.
///
/// * T1′: `ε(t) → 0`, checked as `ε` decreasing along the samples and
///   `ε(T) < ε(t0) / 10`.
/// * T2′: `∫ εΓ = ∞`, checked as a non-decaying trend: the partial integral's
///   increment over the last decade is at least 0.9 times that over the
///   preceding one.
/// * T3′: `∫ εΓ(|x⋆|² - |x_ε|²) < ∞`, checked as saturation: the last decade
///   contributes less than 10% of the partial integral.
///
/// These are trend surrogates for improper integrals and are labelled as such
/// in reports.
#[derive(Debug, Clone, PartialEq)]
pub struct TikhonovConditions {
    pub horizon: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub t1_ok: bool,
    pub t2_integral: f64,
    /// Last-decade increment of the T2′ integral over the previous decade's.
    pub t2_growth_ratio: f64,
    pub t2_ok: bool,
    pub t3_integral: f64,
    pub t3_last_decade_share: f64,
    pub t3_ok: bool,
    /// `r > 2p/(2p+1)`; `None` when the problem declares no error bound.
    pub r_range_ok: Option<bool>,
    pub notes: Vec<String>,
}

impl TikhonovConditions {
    pub fn all_ok(&self) -> bool {
        self.t1_ok && self.t2_ok && self.t3_ok && self.r_range_ok != Some(false)
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let opt = |b: Option<bool>| b.map_or("skipped".to_string(), |b| b.to_string());
        writeln!(out, "horizon = {}", self.horizon).unwrap();
        writeln!(out, "epsilon_start = {:e}", self.epsilon_start).unwrap();
        writeln!(out, "epsilon_end = {:e}", self.epsilon_end).unwrap();
        writeln!(out, "t1_epsilon_vanishes = {}", self.t1_ok).unwrap();
        writeln!(out, "t2_partial_integral = {:e}", self.t2_integral).unwrap();
        writeln!(out, "t2_decade_growth_ratio = {}", self.t2_growth_ratio).unwrap();
        writeln!(out, "t2_divergence_trend = {}", self.t2_ok).unwrap();
        writeln!(out, "t3_partial_integral = {:e}", self.t3_integral).unwrap();
        writeln!(out, "t3_last_decade_share = {}", self.t3_last_decade_share).unwrap();
        writeln!(out, "t3_saturates = {}", self.t3_ok).unwrap();
        writeln!(out, "r_sufficient_range = {}", opt(self.r_range_ok)).unwrap();
        for n in &self.notes {
            writeln!(out, "note = {n}").unwrap();
        }
        out
    }
}

/// Number of log-spaced sample times used by [`check_tikhonov_conditions`].
const CONDITION_SAMPLES: usize = 600;

/// Evaluates the T1′–T3′ surrogates over `[t0, horizon]` (which must span
/// at least two decades of `t - t0 + 1`) and the sufficient `r` range.
pub fn check_tikhonov_conditions(
    d: &DampingSchedule,
    ts: &TikhonovSchedule,
    problem: &CompositeProblem,
    s0: f64,
    horizon: f64,
) -> Result<TikhonovConditions> {
    let t0 = d.t0();
    let span = horizon - t0 + 1.0;
    if !(span >= 100.0) {
        return Err(Error::config(
            "horizon",
            "condition trends need a horizon spanning at least two decades",
        ));
    }
    let x_star_sq = min_norm_solution(problem)?.norm_squared();
    // Log-spaced in t - t0 + 1 so that t0 = 0 is allowed.
    let times: Vec<f64> = (0..CONDITION_SAMPLES)
        .map(|i| t0 - 1.0 + span.powf(i as f64 / (CONDITION_SAMPLES - 1) as f64))
        .collect();
    let eps: Vec<f64> = times
        .iter()
        .map(|&t| ts.epsilon_at(d, s0, t))
        .collect::<Result<_>>()?;
    let big_gamma: Vec<f64> = times
        .iter()
        .map(|&t| d.big_gamma(t))
        .collect::<Result<_>>()?;
    let shortfall: Vec<f64> = eps
        .par_iter()
        .map(|&e| reg_minimizer(problem, e).map(|x| (x_star_sq - x.norm_squared()).max(0.0)))
        .collect::<Result<_>>()?;

    let running = |w: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut acc = vec![0.0; times.len()];
        for k in 1..times.len() {
            acc[k] = acc[k - 1] + 0.5 * (times[k] - times[k - 1]) * (w(k) + w(k - 1));
        }
        acc
    };
    let at = |acc: &[f64], t: f64| -> f64 {
        let k = times.partition_point(|&u| u < t).min(times.len() - 1);
        acc[k]
    };
    let t_end = horizon;
    let t_dec1 = t0 - 1.0 + span / 10.0;
    let t_dec2 = t0 - 1.0 + span / 100.0;

    let i2 = running(&|k| eps[k] * big_gamma[k]);
    let last_inc = at(&i2, t_end) - at(&i2, t_dec1);
    let prev_inc = at(&i2, t_dec1) - at(&i2, t_dec2);
    let t2_growth_ratio = if prev_inc > 0.0 {
        last_inc / prev_inc
    } else {
        0.0
    };

    let i3 = running(&|k| eps[k] * big_gamma[k] * shortfall[k]);
    let t3_total = at(&i3, t_end);
    let t3_share = if t3_total > 0.0 {
        (t3_total - at(&i3, t_dec1)) / t3_total
    } else {
        0.0
    };

    let mut notes = Vec::new();
    let r_range_ok = match problem.error_bound() {
        Some(eb) => Some(ts.in_sufficient_range(eb.exponent)),
        None => {
            notes.push("no error bound declared; sufficient r range not checked".to_string());
            None
        }
    };
    let t1_ok = eps.windows(2).all(|w| w[1] <= w[0]) && eps[eps.len() - 1] < eps[0] / 10.0;
    Ok(TikhonovConditions {
        horizon,
        epsilon_start: eps[0],
        epsilon_end: eps[eps.len() - 1],
        t1_ok,
        t2_integral: at(&i2, t_end),
        t2_growth_ratio,
        t2_ok: t2_growth_ratio >= 0.9,
        t3_integral: t3_total,
        t3_last_decade_share: t3_share,
        t3_ok: t3_share < 0.1,
        r_range_ok,
        notes,
    })
}

/// `R(s) = e^{-φ(s)} ∫_{s1}^{s} e^{φ(u)} σ∞²(θ⁻¹(u)) Γ(θ⁻¹(u)) du` with
/// `φ(u) = u^{1-r} / (1-r)`.
///
/// The exponential weight is evaluated as `e^{φ(u) - φ(s)} <= 1`, so no
/// intermediate quantity overflows however large `φ` gets.
pub fn r_function(
    d: &DampingSchedule,
    ts: &TikhonovSchedule,
    sigma: &DiffusionSchedule,
    s0: f64,
    s1: f64,
    s: f64,
) -> Result<f64> {
    let r = ts.r;
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::config("r", "R(s) is defined for 0 < r < 1"));
    }
    if !(s1 > s0) {
        return Err(Error::Domain(format!("s1 = {s1} must exceed s0 = {s0}")));
    }
    if !(s >= s1) {
        return Err(Error::Domain(format!("s = {s} must be at least s1 = {s1}")));
    }
    if sigma.is_zero() || s == s1 {
        return Ok(0.0);
    }
    let phi = |u: f64| u.powf(1.0 - r) / (1.0 - r);
    let phi_s = phi(s);
    if !phi_s.is_finite() {
        return Err(Error::Numeric(format!("exponent φ({s}) is not finite")));
    }
    let integrand = |u: f64| -> f64 {
        let t = match d.theta_inv(s0, u) {
            Ok(t) => t,
            Err(_) => return f64::NAN,
        };
        let g = d.big_gamma(t).unwrap_or(f64::NAN);
        (phi(u) - phi_s).exp() * sigma.sigma_inf(t).powi(2) * g
    };
    // The weight concentrates in a layer of width ~ s^r below s; integrate
    // that layer and the bulk separately.
    let layer = (s - s1).min(50.0 * s.powf(r));
    let tol = Tolerance::new(0.0, 1e-9);
    let mut total = integrate(integrand, s - layer, s, tol)?.value;
    if layer < s - s1 {
        total += integrate(integrand, s1, s - layer, tol)?.value;
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!("R({s}) is not finite")));
    }
    Ok(total)
}

/// Setup of a minimum-norm selection experiment: an inertial run with the
/// Tikhonov term and a coupled control run without it.
#[derive(Debug, Clone)]
pub struct MinNormStudy<'a> {
    pub problem: &'a CompositeProblem,
    pub damping: &'a DampingSchedule,
    pub tikhonov: TikhonovSchedule,
    pub sigma: &'a DiffusionSchedule,
    pub s0: f64,
    pub x0: Vector,
    pub v0: Vector,
}

/// Monte Carlo outcome of a [`MinNormStudy`].
#[derive(Debug, Clone, PartialEq)]
pub struct MinNormReport {
    pub x_star: Vector,
    pub times: Vec<f64>,
    /// `E|X(t) - x⋆|²` of the Tikhonov run.
    pub mean_dist_sq: Vec<f64>,
    /// `E[F(X(t)) - min F]` of the Tikhonov run.
    pub mean_gap: Vec<f64>,
    /// `E|X(t) - x⋆|²` of the control run.
    pub control_dist_sq: Vec<f64>,
    pub initial_dist_sq: f64,
    pub n_paths: usize,
    pub excluded: usize,
}

impl MinNormReport {
    pub fn final_dist_sq(&self) -> f64 {
        *self.mean_dist_sq.last().expect("non-empty curve")
    }

    pub fn control_final_dist_sq(&self) -> f64 {
        *self.control_dist_sq.last().expect("non-empty curve")
    }

    /// Final distance relative to the initial one.
    pub fn reduction(&self) -> f64 {
        self.final_dist_sq() / self.initial_dist_sq
    }

    /// Control-run final distance over the Tikhonov run's (in norm, not squared).
    pub fn control_ratio(&self) -> f64 {
        (self.control_final_dist_sq() / self.final_dist_sq()).sqrt()
    }

    /// The Tikhonov run ends closer than 10% of the control's distance.
    pub fn below_tenth_of_control(&self) -> bool {
        self.final_dist_sq().sqrt() < 0.1 * self.control_final_dist_sq().sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean_dist_sq,mean_gap,control_mean_dist_sq\n");
        for j in 0..self.times.len() {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e}",
                self.times[j], self.mean_dist_sq[j], self.mean_gap[j], self.control_dist_sq[j]
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

impl MinNormStudy<'_> {
    /// Runs `n_paths` coupled pairs on `grid`, recording at `n_records` log-spaced times.
    pub fn run(
        &self,
        grid: TimeGrid,
        n_paths: usize,
        n_records: usize,
        seed: u64,
    ) -> Result<MinNormReport> {
        if self.problem.solution_set_dim() == Some(0) {
            return Err(Error::DegenerateFixture(
                "the solution set is a single point; minimum-norm selection is trivial".into(),
            ));
        }
        let x_star = min_norm_solution(self.problem)?;
        let table = ScaleTable::new(self.damping, self.s0, &grid)?;
        let idx = log_spaced_indices(&grid, n_records);
        let times: Vec<f64> = idx.iter().map(|&k| grid.t(k)).collect();
        let dim = self.problem.dim();
        let with = InertialSystem::new(self.problem, self.sigma, &table)
            .with_tikhonov(Some(self.tikhonov));
        let without = InertialSystem::new(self.problem, self.sigma, &table);
        let noiseless = self.sigma.is_zero();

        let out = monte_carlo(n_paths, |stream| -> Result<Option<[Vec<f64>; 3]>> {
            let path = if noiseless {
                BrownianPath::zero(dim, grid)
            } else {
                BrownianPath::sample_stream(dim, grid, seed, stream)?
            };
            let a = with.simulate(&path, &self.x0, &self.v0)?;
            let b = without.simulate(&path, &self.x0, &self.v0)?;
            if !(a.is_complete() && b.is_complete()) {
                return Ok(None);
            }
            Ok(Some([
                idx.iter()
                    .map(|&k| (a.position(k) - &x_star).norm_squared())
                    .collect(),
                idx.iter().map(|&k| a.gap[k]).collect(),
                idx.iter()
                    .map(|&k| (b.position(k) - &x_star).norm_squared())
                    .collect(),
            ]))
        })?;
        let n = out.samples.len() as f64;
        let mean = |c: usize| -> Vec<f64> {
            (0..idx.len())
                .map(|j| out.samples.iter().map(|s| s[c][j]).sum::<f64>() / n)
                .collect()
        };
        Ok(MinNormReport {
            initial_dist_sq: (&self.x0 - &x_star).norm_squared(),
            x_star,
            times,
            mean_dist_sq: mean(0),
            mean_gap: mean(1),
            control_dist_sq: mean(2),
            n_paths: out.samples.len(),
            excluded: out.excluded,
        })
    }
}
