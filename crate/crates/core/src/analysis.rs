//! Monte Carlo statistics, rate fits and consistency-order estimation.
//!
//! Asymptotic statements are checked through finite-horizon surrogates:
//! log–log slopes on the tail of a mean gap curve, per-path tail ratios for
//! almost-sure statements, and saturation of running integrals.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problems::CompositeProblem;
use crate::schedules::{DampingSchedule, Diffusion, DiffusionSchedule, ScaleTable};
use crate::sde::{BrownianPath, InertialSystem, TimeGrid, TrajectorySecondOrder};
use crate::Vector;

/// Largest tolerated fraction of aborted Monte Carlo paths.
pub const MAX_ABORT_FRACTION: f64 = 0.01;

/// Default share of the log-time range used by [`fit_loglog_rate`].
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.4;

/// Per-path results of a Monte Carlo batch, in path order.
#[derive(Debug, Clone, PartialEq)]
pub struct McOutcome<T> {
    pub samples: Vec<T>,
    pub excluded: usize,
    pub total: usize,
}

/// Runs `n_paths` independent paths concurrently. `path(i)` returns `None`
/// for an aborted path; more than 1% aborted paths fail the batch. Results
/// are ordered by path index, so aggregation is independent of scheduling.
pub fn monte_carlo<T, F>(n_paths: usize, path: F) -> Result<McOutcome<T>>
where
    T: Send,
    F: Fn(u64) -> Result<Option<T>> + Sync,
{
    let results: Vec<Option<T>> = (0..n_paths as u64)
        .into_par_iter()
        .map(&path)
        .collect::<Result<_>>()?;
    let total = results.len();
    let samples: Vec<T> = results.into_iter().flatten().collect();
    let excluded = total - samples.len();
    if excluded as f64 > MAX_ABORT_FRACTION * total as f64 {
        return Err(Error::ExcessiveAborts { excluded, total });
    }
    Ok(McOutcome {
        samples,
        excluded,
        total,
    })
}

/// `n` node indices of `grid`, log-spaced in `t - t_start + offset` (all distinct).
pub fn log_spaced_indices(grid: &TimeGrid, n: usize) -> Vec<usize> {
    let t0 = grid.t_start();
    let offset = if t0 > 0.0 { 0.0 } else { grid.step() };
    let lo = t0 + offset;
    let hi = grid.t_end();
    let mut idx: Vec<usize> = (0..n)
        .map(|i| {
            let t = lo * (hi / lo).powf(i as f64 / (n.max(2) - 1) as f64);
            (((t - t0) / grid.step()).round() as usize).min(grid.n_steps())
        })
        .collect();
    idx.dedup();
    idx
}

/// `n` evenly spaced node indices of `grid`, including both ends.
pub fn linear_indices(grid: &TimeGrid, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n)
        .map(|i| (i as f64 * grid.n_steps() as f64 / (n.max(2) - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

/// Monte Carlo mean of `F(X(t)) - min F` at recorded times.
#[derive(Debug, Clone, PartialEq)]
pub struct GapCurve {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_paths: usize,
    pub excluded: usize,
}

impl GapCurve {
    /// Aggregates per-path values at `times` (one inner vector per path).
    pub fn from_samples(times: Vec<f64>, samples: &[Vec<f64>], excluded: usize) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::config("n_paths", "no completed paths to aggregate"));
        }
        if samples.iter().any(|s| s.len() != times.len()) {
            return Err(Error::config(
                "samples",
                "every path must report one value per time",
            ));
        }
        let m = times.len();
        let mut mean = vec![0.0; m];
        let mut stderr = vec![0.0; m];
        for j in 0..m {
            let mu = samples.iter().map(|s| s[j]).sum::<f64>() / n as f64;
            let var = if n > 1 {
                samples.iter().map(|s| (s[j] - mu).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            mean[j] = mu;
            stderr[j] = (var / n as f64).sqrt();
        }
        Ok(Self {
            times,
            mean,
            stderr,
            n_paths: n,
            excluded,
        })
    }

    /// Indices where the mean is below `-3` standard errors.
    pub fn negative_flags(&self) -> Vec<usize> {
        (0..self.times.len())
            .filter(|&j| self.mean[j] < -3.0 * self.stderr[j])
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean_gap,stderr\n");
        for j in 0..self.times.len() {
            writeln!(
                out,
                "{:e},{:e},{:e}",
                self.times[j], self.mean[j], self.stderr[j]
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

/// Monte Carlo gap curve: `path(i)` returns the gap of path `i` at the record
/// indices (or `None` if it aborted).
pub fn mc_gap_curve<F>(times: Vec<f64>, n_paths: usize, path: F) -> Result<GapCurve>
where
    F: Fn(u64) -> Result<Option<Vec<f64>>> + Sync,
{
    if n_paths < 2 {
        return Err(Error::config(
            "n_paths",
            "a Monte Carlo curve needs at least 2 paths",
        ));
    }
    let out = monte_carlo(n_paths, path)?;
    GapCurve::from_samples(times, &out.samples, out.excluded)
}

/// Ordinary least squares `y ≈ slope x + intercept`, with `R²`.
pub fn least_squares(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::Numeric(
            "least squares needs at least two points".into(),
        ));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Numeric(
            "least squares with degenerate abscissae".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok((slope, intercept, r2))
}

/// Slope of `log err` against `log h`.
pub fn fit_power_order(steps: &[f64], errors: &[f64]) -> Result<f64> {
    if errors.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Numeric("order fit needs positive errors".into()));
    }
    let x: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    least_squares(&x, &y).map(|(s, _, _)| s)
}

/// A fitted slope with its window and, once judged, a verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub t_lo: f64,
    pub t_hi: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
    /// Points dropped from the window because the gap was not positive.
    pub dropped: usize,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    pub verdict: Option<bool>,
}

/// Minimum number of points in a fit window.
pub const MIN_FIT_POINTS: usize = 10;

impl RateFit {
    /// Verdict `|slope - target| <= tolerance`.
    pub fn judge(mut self, target: f64, tolerance: f64) -> Self {
        self.target = Some(target);
        self.tolerance = Some(tolerance);
        self.verdict = Some((self.slope - target).abs() <= tolerance);
        self
    }

    /// Verdict `slope <= bound` (the rate is at least as fast as the bound).
    pub fn judge_at_most(mut self, bound: f64) -> Self {
        self.target = Some(bound);
        self.tolerance = None;
        self.verdict = Some(self.slope <= bound);
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Some(true)
    }
}

fn fit_points(xs: Vec<f64>, ys: Vec<f64>, t_lo: f64, t_hi: f64, dropped: usize) -> Result<RateFit> {
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::Numeric(format!(
            "fit window [{t_lo:e}, {t_hi:e}] holds {} usable points (need {MIN_FIT_POINTS})",
            xs.len()
        )));
    }
    let (slope, intercept, r2) = least_squares(&xs, &ys)?;
    Ok(RateFit {
        t_lo,
        t_hi,
        slope,
        intercept,
        r2,
        n_points: xs.len(),
        dropped,
        target: None,
        tolerance: None,
        verdict: None,
    })
}

/// Least-squares slope of `log gap` against `log t` over the last
/// `window_fraction` of the log-time range. Nonpositive gaps are dropped from
/// the window and counted in [`RateFit::dropped`].
pub fn fit_loglog_rate(curve: &GapCurve, window_fraction: f64) -> Result<RateFit> {
    if !(window_fraction > 0.0 && window_fraction < 1.0) {
        return Err(Error::config("window_fraction", "must lie in (0, 1)"));
    }
    let positive_t: Vec<f64> = curve.times.iter().copied().filter(|&t| t > 0.0).collect();
    let (Some(&first), Some(&last)) = (positive_t.first(), positive_t.last()) else {
        return Err(Error::Numeric("empty fit window".into()));
    };
    let t_lo = (last.ln() - window_fraction * (last.ln() - first.ln())).exp();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut dropped = 0;
    for (&t, &g) in curve.times.iter().zip(&curve.mean) {
        if t >= t_lo * (1.0 - 1e-12) && t > 0.0 {
            if g > 0.0 {
                xs.push(t.ln());
                ys.push(g.ln());
            } else {
                dropped += 1;
            }
        }
    }
    if dropped > 0 {
        log::warn!("fit window [{t_lo:e}, {last:e}]: dropped {dropped} nonpositive gap values");
    }
    fit_points(xs, ys, t_lo, last, dropped)
}

/// Per-path tail diagnostic for almost-sure rates.
#[derive(Debug, Clone, PartialEq)]
pub struct AsRateReport {
    /// Per path: max of `w(t) gap(t)` over the last decade divided by its max over the first decade.
    pub ratios: Vec<f64>,
    pub median: f64,
    pub quartiles: (f64, f64),
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Computes the per-path ratios from gaps recorded at `times`.
/// The first decade is `[t_1, 10 t_1]`, the last `[t_n / 10, t_n]`.
pub fn as_rate_diagnostic(
    times: &[f64],
    gaps_per_path: &[Vec<f64>],
    weight: impl Fn(f64) -> f64,
) -> Result<AsRateReport> {
    if gaps_per_path.len() < 16 {
        return Err(Error::config(
            "n_paths",
            format!(
                "almost-sure diagnostic needs at least 16 paths, got {}",
                gaps_per_path.len()
            ),
        ));
    }
    let first = times
        .iter()
        .copied()
        .find(|&t| t > 0.0)
        .ok_or_else(|| Error::config("times", "needs positive record times"))?;
    let last = *times.last().expect("non-empty");
    if last < 100.0 * first {
        return Err(Error::config(
            "times",
            "record times must span at least two decades",
        ));
    }
    let mut ratios: Vec<f64> = gaps_per_path
        .iter()
        .map(|gaps| {
            let mut head: f64 = 0.0;
            let mut tail: f64 = 0.0;
            for (&t, &g) in times.iter().zip(gaps) {
                let w = weight(t) * g;
                if t >= first && t <= 10.0 * first {
                    head = head.max(w);
                }
                if t >= last / 10.0 {
                    tail = tail.max(w);
                }
            }
            if tail == 0.0 {
                0.0
            } else if head == 0.0 {
                f64::INFINITY
            } else {
                tail / head
            }
        })
        .collect();
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let median = quantile(&sorted, 0.5);
    let quartiles = (quantile(&sorted, 0.25), quantile(&sorted, 0.75));
    ratios.shrink_to_fit();
    Ok(AsRateReport {
        ratios,
        median,
        quartiles,
    })
}

/// Running left-endpoint integral `h Σ_{j<k} w(t_j) v_j²`, evaluated at the horizon
/// and at `t_end / 10`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralSplit {
    pub total: f64,
    pub last_decade: f64,
}

impl IntegralSplit {
    /// Share of the total accumulated over the last decade.
    pub fn share(&self) -> f64 {
        if self.total == 0.0 {
            0.0
        } else {
            self.last_decade / self.total
        }
    }
}

/// Splits `h Σ w(t_k) values[k]²` into total and last-decade parts.
pub fn weighted_square_integral(
    grid: &TimeGrid,
    values: &[f64],
    weight: impl Fn(f64) -> f64,
) -> IntegralSplit {
    let h = grid.step();
    let n = values.len().min(grid.n_steps());
    let t_split = grid.t(n) / 10.0;
    let mut total = 0.0;
    let mut last = 0.0;
    for (k, v) in values.iter().take(n).enumerate() {
        let t = grid.t(k);
        let c = h * weight(t) * v * v;
        total += c;
        if t >= t_split {
            last += c;
        }
    }
    IntegralSplit {
        total,
        last_decade: last,
    }
}

/// Share of the Monte Carlo mean integral accumulated over the last decade.
pub fn gradient_integral_share(splits: &[IntegralSplit]) -> f64 {
    let total: f64 = splits.iter().map(|s| s.total).sum();
    let last: f64 = splits.iter().map(|s| s.last_decade).sum();
    if total == 0.0 {
        0.0
    } else {
        last / total
    }
}

/// Outcome of the linear-rate fit under a PL inequality.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearRate {
    Fitted(RateFit),
    /// Fewer than [`MIN_FIT_POINTS`] points lie above ten times the noise floor.
    FloorLimited,
}

impl LinearRate {
    pub fn passed(&self) -> bool {
        matches!(self, LinearRate::Fitted(f) if f.passed())
    }
}

/// Noise floor `(L / 2μ) σ∞²((t - t0) / (4μ))` of the PL rate.
pub fn pl_noise_floor(sigma: &DiffusionSchedule, lipschitz: f64, mu: f64, t0: f64, t: f64) -> f64 {
    lipschitz / (2.0 * mu) * sigma.sigma_inf((t - t0) / (4.0 * mu)).powi(2)
}

/// Fits `log gap` against `t` on the initial stretch where the gap exceeds
/// ten times `floor(t)`. Target slope `-μ/2`; verdict `slope <= -0.8 μ/2`.
pub fn linear_rate_fit(
    curve: &GapCurve,
    mu: f64,
    floor: impl Fn(f64) -> f64,
) -> Result<LinearRate> {
    if !(mu > 0.0) {
        return Err(Error::config("mu", "PL constant must be positive"));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &g) in curve.times.iter().zip(&curve.mean) {
        if !(g > 10.0 * floor(t)) || !(g > 0.0) {
            break;
        }
        xs.push(t);
        ys.push(g.ln());
    }
    if xs.len() < MIN_FIT_POINTS {
        return Ok(LinearRate::FloorLimited);
    }
    let (t_lo, t_hi) = (xs[0], xs[xs.len() - 1]);
    let fit = fit_points(xs, ys, t_lo, t_hi, 0)?;
    let mut fit = fit.judge_at_most(-0.8 * mu / 2.0);
    fit.target = Some(-mu / 2.0);
    fit.tolerance = Some(0.2 * mu / 2.0);
    Ok(LinearRate::Fitted(fit))
}

/// How the diffusion enters the consistency study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseScaling {
    /// Diffusion multiplied by `√h` in the scheme and in the SDE reference:
    /// the product-space form in which the scheme is an `O(h)` approximation.
    #[default]
    SqrtStep,
    /// Diffusion used as is.
    Unit,
}

/// Strong errors of the inertial scheme against fine references.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub steps: Vec<f64>,
    /// `E sup_k (|X_k - X(t_k)| + |V_k - V(t_k)|)` against the fine SDE reference.
    pub error_sde: Vec<f64>,
    /// Same against the deterministic (`σ = 0`) reference.
    pub error_ode: Vec<f64>,
    pub order_sde: f64,
    pub order_ode: f64,
    pub reference_step: f64,
    pub n_paths: usize,
    pub noise: NoiseScaling,
}

impl ConsistencyReport {
    /// Each halving of `h` raises neither error by more than 5%.
    pub fn errors_monotone(&self) -> bool {
        let mono = |e: &[f64]| e.windows(2).all(|w| w[1] <= 1.05 * w[0]);
        mono(&self.error_sde) && mono(&self.error_ode)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,error_sde,error_ode\n");
        for i in 0..self.steps.len() {
            writeln!(
                out,
                "{:e},{:e},{:e}",
                self.steps[i], self.error_sde[i], self.error_ode[i]
            )
            .unwrap();
        }
        writeln!(out, "# order_sde = {}", self.order_sde).unwrap();
        writeln!(out, "# order_ode = {}", self.order_ode).unwrap();
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Setup of a strong-consistency study of the inertial scheme (`β = Γ`).
#[derive(Debug, Clone)]
pub struct ConsistencyStudy<'a> {
    pub problem: &'a CompositeProblem,
    pub damping: &'a DampingSchedule,
    pub sigma: &'a DiffusionSchedule,
    pub s0: f64,
    pub horizon: f64,
    pub x0: Vector,
    pub v0: Vector,
    pub noise: NoiseScaling,
}

fn sup_error(
    coarse: &TrajectorySecondOrder,
    fine: &TrajectorySecondOrder,
    ratio: usize,
) -> Result<f64> {
    if !(coarse.is_complete() && fine.is_complete()) {
        return Err(Error::Numeric(
            "consistency: non-finite state in a scheme or reference run".into(),
        ));
    }
    // Nodes k = 0..N-1, as in the strong error definition.
    Ok((0..coarse.len() - 1)
        .map(|k| {
            (coarse.position(k) - fine.position(k * ratio)).norm()
                + (coarse.velocity(k) - fine.velocity(k * ratio)).norm()
        })
        .fold(0.0, f64::max))
}

impl ConsistencyStudy<'_> {
    /// Strong errors for `h0 / 2^i`, `i = 0..levels`, against references at
    /// `h0 / 64` on the same Brownian path (coarse increments are sums of the
    /// reference increments).
    pub fn run(
        &self,
        h0: f64,
        levels: usize,
        n_paths: usize,
        seed: u64,
    ) -> Result<ConsistencyReport> {
        const REF_FACTOR: usize = 64;
        if levels < 2 || (1usize << (levels - 1)) > REF_FACTOR {
            return Err(Error::config(
                "levels",
                format!("need 2..=7 step levels, got {levels}"),
            ));
        }
        let t0 = self.damping.t0();
        let coarse_grid = TimeGrid::new(t0, self.horizon, h0)?;
        let ref_grid = coarse_grid.refine(REF_FACTOR);
        let grids: Vec<TimeGrid> = (0..levels)
            .map(|i| ref_grid.coarsen(REF_FACTOR >> i))
            .collect::<Result<_>>()?;
        let tables: Vec<ScaleTable> = grids
            .iter()
            .map(|g| ScaleTable::new(self.damping, self.s0, g))
            .collect::<Result<_>>()?;
        let ref_table = ScaleTable::new(self.damping, self.s0, &ref_grid)?;
        let dim = self.problem.dim();
        let gain = |h: f64| match self.noise {
            NoiseScaling::SqrtStep => h.sqrt(),
            NoiseScaling::Unit => 1.0,
        };
        let zero = DiffusionSchedule::zero();
        let ode_ref = InertialSystem::new(self.problem, &zero, &ref_table).simulate(
            &BrownianPath::zero(dim, ref_grid),
            &self.x0,
            &self.v0,
        )?;
        let steps: Vec<f64> = grids.iter().map(TimeGrid::step).collect();
        let noiseless = self.sigma.is_zero();
        let n_paths = if noiseless { 1 } else { n_paths.max(1) };

        let per_path = monte_carlo(n_paths, |stream| -> Result<Option<Vec<(f64, f64)>>> {
            let fine = if noiseless {
                BrownianPath::zero(dim, ref_grid)
            } else {
                BrownianPath::sample_stream(dim, ref_grid, seed, stream)?
            };
            let mut errs = Vec::with_capacity(levels);
            for (i, table) in tables.iter().enumerate() {
                let ratio = REF_FACTOR >> i;
                let g = gain(steps[i]);
                let scheme = InertialSystem::new(self.problem, self.sigma, table)
                    .with_noise_gain(g)
                    .simulate(&fine.coarsen(ratio)?, &self.x0, &self.v0)?;
                let sde_ref = InertialSystem::new(self.problem, self.sigma, &ref_table)
                    .with_noise_gain(g)
                    .simulate(&fine, &self.x0, &self.v0)?;
                errs.push((
                    sup_error(&scheme, &sde_ref, ratio)?,
                    sup_error(&scheme, &ode_ref, ratio)?,
                ));
            }
            Ok(Some(errs))
        })?;

        let n = per_path.samples.len() as f64;
        let error_sde: Vec<f64> = (0..levels)
            .map(|i| per_path.samples.iter().map(|e| e[i].0).sum::<f64>() / n)
            .collect();
        let error_ode: Vec<f64> = (0..levels)
            .map(|i| per_path.samples.iter().map(|e| e[i].1).sum::<f64>() / n)
            .collect();
        Ok(ConsistencyReport {
            order_sde: fit_power_order(&steps, &error_sde)?,
            order_ode: fit_power_order(&steps, &error_ode)?,
            steps,
            error_sde,
            error_ode,
            reference_step: ref_grid.step(),
            n_paths,
            noise: self.noise,
        })
    }
}

/// Consistency orders for `h ∈ {h0, h0/2, h0/4, h0/8}` with the product-space noise scaling.
#[allow(clippy::too_many_arguments)]
pub fn consistency_orders(
    problem: &CompositeProblem,
    d: &DampingSchedule,
    sigma: &DiffusionSchedule,
    horizon: f64,
    h0: f64,
    x0: &Vector,
    v0: &Vector,
    n_paths: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    ConsistencyStudy {
        problem,
        damping: d,
        sigma,
        s0: crate::schedules::DEFAULT_S0,
        horizon,
        x0: x0.clone(),
        v0: v0.clone(),
        noise: NoiseScaling::SqrtStep,
    }
    .run(h0, 4, n_paths, seed)
}
