//! Config-driven experiment runner.
//!
//! Every run writes into a fresh directory `<output_dir>/<scenario>_<seed>_<unix time>`:
//! the resolved `config.toml`, the scenario's CSV files and `summary.txt`,
//! a list of `key = value` lines including one `verdict.<name>` line per check.
//! All files are written after aggregation, so their contents depend only on
//! the config.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::analysis::{
    as_rate_diagnostic, fit_loglog_rate, gradient_integral_share, linear_indices, linear_rate_fit,
    log_spaced_indices, monte_carlo, pl_noise_floor, weighted_square_integral, ConsistencyStudy,
    GapCurve, LinearRate, NoiseScaling,
};
use crate::config::{DampingSpec, Dynamics, RunConfig, Scenario};
use crate::error::{Error, Result};
use crate::problems::CompositeProblem;
use crate::schedules::{integrability_class, DampingSchedule, Diffusion, ScaleTable};
use crate::sde::{simulate_first_order, BrownianPath, InertialSystem, TimeGrid};
use crate::tikhonov::{check_tikhonov_conditions, MinNormStudy};
use crate::transform::TransformCheck;

/// One pass/fail check of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    /// The property being checked, in words.
    pub property: String,
    pub passed: bool,
}

/// Artifacts and verdicts of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub dir: PathBuf,
    pub summary: Vec<(String, String)>,
    pub verdicts: Vec<Verdict>,
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    /// Value of a summary key.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.summary
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Process exit status: 0 iff every verdict passed.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

#[derive(Default)]
struct Report {
    files: Vec<(String, String)>,
    summary: Vec<(String, String)>,
    verdicts: Vec<Verdict>,
}

impl Report {
    fn put(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    fn file(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    fn verdict(&mut self, name: &str, property: &str, passed: bool) {
        self.verdicts.push(Verdict {
            name: name.to_string(),
            property: property.to_string(),
            passed,
        });
    }

    fn summary_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.summary {
            writeln!(out, "{k} = {v}").unwrap();
        }
        for v in &self.verdicts {
            writeln!(
                out,
                "verdict.{} = {}",
                v.name,
                if v.passed { "pass" } else { "fail" }
            )
            .unwrap();
            writeln!(out, "verdict.{}.property = {}", v.name, v.property).unwrap();
        }
        writeln!(
            out,
            "all_passed = {}",
            self.verdicts.iter().all(|v| v.passed)
        )
        .unwrap();
        out
    }
}

/// Everything a scenario needs, resolved from the config.
struct Setup<'a> {
    cfg: &'a RunConfig,
    problem: CompositeProblem,
    damping: DampingSchedule,
    grid: TimeGrid,
}

/// Validates `config`, runs its scenario and writes the artifacts.
///
/// Invalid configs fail with [`Error::Config`] naming the key; configs whose
/// schedules violate a hypothesis the scenario depends on are refused with
/// [`Error::Hypothesis`] naming the predicate.
pub fn run_scenario(config: &RunConfig) -> Result<ScenarioOutcome> {
    config.validate()?;
    let setup = Setup {
        cfg: config,
        problem: config.problem.build()?,
        damping: config.damping_schedule()?,
        grid: config.time_grid()?,
    };
    let mut report = Report::default();
    report.put("scenario", config.scenario.name());
    report.put("seed", config.seed);
    report.put("n_paths", config.n_paths);
    match config.scenario {
        Scenario::Simulate => simulate(&setup, &mut report)?,
        Scenario::Rates => rates(&setup, &mut report)?,
        Scenario::Consistency => consistency(&setup, &mut report)?,
        Scenario::TransformCheck => transform_check(&setup, &mut report)?,
        Scenario::Tikhonov => tikhonov(&setup, &mut report)?,
        Scenario::Pl => pl(&setup, &mut report)?,
    }
    let dir = create_run_dir(config)?;
    std::fs::write(dir.join("config.toml"), config.to_toml()?)?;
    for (name, contents) in &report.files {
        std::fs::write(dir.join(name), contents)?;
    }
    std::fs::write(dir.join("summary.txt"), report.summary_text())?;
    Ok(ScenarioOutcome {
        dir,
        summary: report.summary,
        verdicts: report.verdicts,
    })
}

fn create_run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let base = format!("{}_{}_{}", cfg.scenario.name(), cfg.seed, stamp);
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut dir = cfg.output_dir.join(&base);
    let mut n = 1;
    // create_dir fails if the directory exists, which makes the name unique.
    while let Err(e) = std::fs::create_dir(&dir) {
        if e.kind() != std::io::ErrorKind::AlreadyExists {
            return Err(e.into());
        }
        n += 1;
        dir = cfg.output_dir.join(format!("{base}_{n}"));
    }
    Ok(dir)
}

fn require_inertial(cfg: &RunConfig) -> Result<()> {
    if cfg.dynamics == Dynamics::FirstOrder {
        return Err(Error::Config {
            key: "dynamics".into(),
            message: format!(
                "the {} scenario simulates the inertial system",
                cfg.scenario.name()
            ),
        });
    }
    Ok(())
}

fn brownian(
    dim: usize,
    grid: TimeGrid,
    seed: u64,
    stream: u64,
    noiseless: bool,
) -> Result<BrownianPath> {
    if noiseless {
        Ok(BrownianPath::zero(dim, grid))
    } else {
        BrownianPath::sample_stream(dim, grid, seed, stream)
    }
}

/// Per-path record of a Monte Carlo run.
struct PathRecord {
    gaps: Vec<f64>,
    /// `(total, last decade)` of `∫ t³ |∇F(look-ahead)|²`.
    integral: Option<crate::analysis::IntegralSplit>,
}

fn run_paths(
    s: &Setup,
    idx: &[usize],
    with_integral: bool,
    trajectory_csv: bool,
) -> Result<(GapCurve, Vec<PathRecord>, Option<String>)> {
    let cfg = s.cfg;
    let dim = s.problem.dim();
    let grid = s.grid;
    let noiseless = cfg.diffusion.is_zero();
    let x0 = cfg.x0();
    let v0 = cfg.v0();
    let table = match cfg.dynamics {
        Dynamics::Inertial => Some(ScaleTable::new(&s.damping, cfg.s0, &grid)?),
        Dynamics::FirstOrder => None,
    };
    let stride = (grid.n_steps() / 2000).max(1);
    let out = monte_carlo(
        cfg.n_paths,
        |stream| -> Result<Option<(PathRecord, Option<String>)>> {
            let path = brownian(dim, grid, cfg.seed, stream, noiseless)?;
            let keep_csv = trajectory_csv && stream == 0;
            let (gap, complete, integral, csv) = match &table {
                None => {
                    let tr = simulate_first_order(
                        &s.problem,
                        &cfg.diffusion,
                        &path,
                        &x0,
                        cfg.tikhonov.as_ref(),
                    )?;
                    let csv = keep_csv.then(|| tr.to_csv(stride));
                    (tr.gap.clone(), tr.is_complete(), None, csv)
                }
                Some(table) => {
                    let tr = InertialSystem::new(&s.problem, &cfg.diffusion, table)
                        .with_tikhonov(cfg.tikhonov)
                        .simulate(&path, &x0, &v0)?;
                    let integral = with_integral
                        .then(|| weighted_square_integral(&grid, &tr.grad_norm, |t| t.powi(3)));
                    let csv = keep_csv.then(|| tr.to_csv(stride));
                    (tr.gap.clone(), tr.is_complete(), integral, csv)
                }
            };
            if !complete {
                return Ok(None);
            }
            Ok(Some((
                PathRecord {
                    gaps: idx.iter().map(|&k| gap[k]).collect(),
                    integral,
                },
                csv,
            )))
        },
    )?;
    let times: Vec<f64> = idx.iter().map(|&k| grid.t(k)).collect();
    let mut csv = None;
    let mut records = Vec::with_capacity(out.samples.len());
    for (rec, c) in out.samples {
        if c.is_some() {
            csv = c;
        }
        records.push(rec);
    }
    let samples: Vec<Vec<f64>> = records.iter().map(|r| r.gaps.clone()).collect();
    let curve = GapCurve::from_samples(times, &samples, out.excluded)?;
    Ok((curve, records, csv))
}

fn put_curve(report: &mut Report, curve: &GapCurve) {
    report.put("paths_completed", curve.n_paths);
    report.put("paths_excluded", curve.excluded);
    report.put("initial_mean_gap", format!("{:e}", curve.mean[0]));
    report.put(
        "final_mean_gap",
        format!("{:e}", curve.mean[curve.mean.len() - 1]),
    );
    let flags = curve.negative_flags();
    if !flags.is_empty() {
        report.put("negative_mean_gap_nodes", flags.len());
    }
}

fn simulate(s: &Setup, report: &mut Report) -> Result<()> {
    let idx = log_spaced_indices(&s.grid, s.cfg.records);
    let (curve, _, csv) = run_paths(s, &idx, false, true)?;
    put_curve(report, &curve);
    report.file("gap.csv", curve.to_csv());
    if let Some(csv) = csv {
        report.file("trajectory_path0.csv", csv);
    }
    Ok(())
}

fn rates(s: &Setup, report: &mut Report) -> Result<()> {
    let cfg = s.cfg;
    let class = integrability_class(&s.damping, &cfg.diffusion);
    let power_damping = matches!(cfg.damping, DampingSpec::Power { .. });
    let default_target = match cfg.dynamics {
        Dynamics::FirstOrder => {
            class.require("first_order_rate_ok")?;
            -1.0
        }
        Dynamics::Inertial => {
            class.require("rate_ok")?;
            if power_damping {
                class.require("fast_ok")?;
                -2.0
            } else {
                -1.0
            }
        }
    };
    let fast = cfg.dynamics == Dynamics::Inertial && power_damping;
    let idx = log_spaced_indices(&s.grid, cfg.records);
    let (curve, records, _) = run_paths(s, &idx, fast, false)?;
    put_curve(report, &curve);
    report.file("gap.csv", curve.to_csv());

    let target = cfg.checks.target_slope.unwrap_or(default_target);
    let fit = fit_loglog_rate(&curve, cfg.checks.window_fraction)?
        .judge(target, cfg.checks.slope_tolerance);
    report.put("fit_window", format!("[{:e}, {:e}]", fit.t_lo, fit.t_hi));
    report.put("fit_points", fit.n_points);
    report.put("fit_slope", fit.slope);
    report.put("fit_r2", fit.r2);
    report.put("fit_target", target);
    report.put("fit_tolerance", cfg.checks.slope_tolerance);
    report.verdict(
        "rate_slope",
        &format!(
            "tail log-log slope of the mean gap within {} of {target}",
            cfg.checks.slope_tolerance
        ),
        fit.passed(),
    );

    if fast {
        if curve.n_paths >= 16 {
            let per_path: Vec<Vec<f64>> = records.iter().map(|r| r.gaps.clone()).collect();
            let diag = as_rate_diagnostic(&curve.times, &per_path, |t| t * t)?;
            report.put("as_ratio_median", diag.median);
            report.put(
                "as_ratio_quartiles",
                format!("[{}, {}]", diag.quartiles.0, diag.quartiles.1),
            );
            report.verdict(
                "as_rate_median",
                "per-path surrogate: median of last-decade over first-decade max of t^2 gap is below the bound",
                diag.median < cfg.checks.as_median_max,
            );
        } else {
            report.put("as_ratio_median", "skipped (fewer than 16 paths)");
        }
        let splits: Vec<_> = records.iter().filter_map(|r| r.integral).collect();
        let share = gradient_integral_share(&splits);
        report.put("gradient_integral_last_decade_share", share);
        report.verdict(
            "gradient_integral",
            "integral of t^3 |grad F(X + Gamma V)|^2 saturates: last-decade share below the bound",
            share < cfg.checks.integral_share_max,
        );
    }
    Ok(())
}

fn consistency(s: &Setup, report: &mut Report) -> Result<()> {
    let cfg = s.cfg;
    require_inertial(cfg)?;
    let study = ConsistencyStudy {
        problem: &s.problem,
        damping: &s.damping,
        sigma: &cfg.diffusion,
        s0: cfg.s0,
        horizon: cfg.grid.horizon,
        x0: cfg.x0(),
        v0: cfg.v0(),
        noise: NoiseScaling::SqrtStep,
    };
    let rep = study.run(cfg.grid.h, cfg.checks.levels, cfg.n_paths, cfg.seed)?;
    report.file("consistency.csv", rep.to_csv());
    report.put("reference_step", rep.reference_step);
    report.put("order_sde", rep.order_sde);
    report.put("order_ode", rep.order_ode);
    let [lo, hi] = cfg.checks.sde_order;
    report.verdict(
        "order_sde",
        &format!("strong order against the fine SDE reference within [{lo}, {hi}]"),
        (lo..=hi).contains(&rep.order_sde),
    );
    if !cfg.diffusion.is_zero() {
        let [lo, hi] = cfg.checks.ode_order;
        report.verdict(
            "order_ode",
            &format!("strong order against the deterministic reference within [{lo}, {hi}]"),
            (lo..=hi).contains(&rep.order_ode),
        );
    }
    report.verdict(
        "errors_monotone",
        "halving h never raises a strong error by more than 5%",
        rep.errors_monotone(),
    );
    Ok(())
}

fn transform_check(s: &Setup, report: &mut Report) -> Result<()> {
    let cfg = s.cfg;
    require_inertial(cfg)?;
    let check = TransformCheck {
        problem: &s.problem,
        sigma: &cfg.diffusion,
        damping: &s.damping,
        s0: cfg.s0,
        horizon: cfg.grid.horizon,
        x0: cfg.x0(),
        v0: cfg.v0(),
        levels: cfg.checks.levels,
        n_paths: cfg.n_paths,
    };
    let rep = check.run(cfg.grid.h, cfg.seed)?;
    report.file("transform.csv", rep.to_csv());
    let min_order = cfg
        .checks
        .transform_min_order
        .unwrap_or(if cfg.diffusion.is_zero() { 0.9 } else { 0.4 });
    match rep.order {
        Some(o) => report.put("discrepancy_order", o),
        None => report.put("discrepancy_order", "undefined (zero discrepancy)"),
    }
    report.put(
        "final_discrepancy",
        format!("{:e}", rep.discrepancy[rep.discrepancy.len() - 1]),
    );
    // Exact agreement at every step size trivially satisfies the order check.
    let passed = match rep.order {
        Some(o) => o >= min_order,
        None => rep.discrepancy.iter().all(|&d| d == 0.0),
    };
    report.verdict(
        "transform_order",
        &format!(
            "direct and scaled-averaged trajectories agree with empirical order >= {min_order}"
        ),
        passed,
    );
    Ok(())
}

fn tikhonov(s: &Setup, report: &mut Report) -> Result<()> {
    let cfg = s.cfg;
    require_inertial(cfg)?;
    let ts = cfg.tikhonov.ok_or_else(|| {
        Error::config(
            "tikhonov",
            "the tikhonov scenario needs a [tikhonov] section",
        )
    })?;
    integrability_class(&s.damping, &cfg.diffusion).require("traj_ok")?;
    match check_tikhonov_conditions(&s.damping, &ts, &s.problem, cfg.s0, cfg.grid.horizon) {
        Ok(c) => {
            report.file("conditions.txt", c.to_text());
            report.verdict(
                "t1_epsilon_vanishes",
                "epsilon decreases to below a tenth of its start",
                c.t1_ok,
            );
            report.verdict(
                "t2_divergence_trend",
                "trend surrogate: integral of epsilon Gamma keeps growing over the last decade",
                c.t2_ok,
            );
            report.verdict(
                "t3_saturation",
                "trend surrogate: integral of epsilon Gamma (|x*|^2 - |x_eps|^2) has last-decade share below 10%",
                c.t3_ok,
            );
            if let Some(ok) = c.r_range_ok {
                report.verdict(
                    "r_sufficient_range",
                    "r > 2p/(2p+1) for the error-bound exponent p",
                    ok,
                );
            }
        }
        Err(Error::Config { message, .. }) => {
            report.put("conditions", format!("skipped: {message}"))
        }
        Err(e) => return Err(e),
    }
    let study = MinNormStudy {
        problem: &s.problem,
        damping: &s.damping,
        tikhonov: ts,
        sigma: &cfg.diffusion,
        s0: cfg.s0,
        x0: cfg.x0(),
        v0: cfg.v0(),
    };
    let rep = study.run(s.grid, cfg.n_paths, cfg.records, cfg.seed)?;
    report.file("tikhonov.csv", rep.to_csv());
    report.put("x_star", format!("{:?}", rep.x_star.as_slice()));
    report.put("initial_dist_sq", rep.initial_dist_sq);
    report.put("final_dist_sq", format!("{:e}", rep.final_dist_sq()));
    report.put(
        "control_final_dist_sq",
        format!("{:e}", rep.control_final_dist_sq()),
    );
    report.put("reduction", format!("{:e}", rep.reduction()));
    report.put("control_ratio", rep.control_ratio());
    report.verdict(
        "min_norm_reduction",
        &format!(
            "final E|X - x*|^2 below {} of its initial value",
            cfg.checks.reduction_max
        ),
        rep.reduction() < cfg.checks.reduction_max,
    );
    report.verdict(
        "control_separation",
        &format!(
            "the run without regularization ends at least {} times farther from x*",
            cfg.checks.control_factor_min
        ),
        rep.control_ratio() >= cfg.checks.control_factor_min,
    );
    Ok(())
}

fn pl(s: &Setup, report: &mut Report) -> Result<()> {
    let cfg = s.cfg;
    require_inertial(cfg)?;
    let DampingSpec::Constant { c } = cfg.damping else {
        return Err(Error::config(
            "damping.kind",
            "the pl scenario needs constant damping",
        ));
    };
    let mu = s.problem.pl_constant().ok_or_else(|| {
        Error::Hypothesis("the problem declares no PL constant (pl_ok false)".into())
    })?;
    let matched = (c - (2.0 * mu).sqrt()).abs() <= 1e-9 * c;
    if !matched {
        log::warn!(
            "pl scenario: damping {c} differs from sqrt(2 mu) = {}",
            (2.0 * mu).sqrt()
        );
    }
    report.put("mu", mu);
    report.put("damping_matches_sqrt_2mu", matched);
    let idx = linear_indices(&s.grid, cfg.records);
    let (curve, _, _) = run_paths(s, &idx, false, false)?;
    put_curve(report, &curve);
    report.file("gap.csv", curve.to_csv());
    let lip = s.problem.drift_lipschitz();
    let t0 = cfg.grid.t0;
    let fit = linear_rate_fit(&curve, mu, |t| {
        pl_noise_floor(&cfg.diffusion, lip, mu, t0, t)
    })?;
    let bound = -cfg.checks.pl_slope_factor * mu / 2.0;
    let passed = match &fit {
        LinearRate::Fitted(f) => {
            report.put("fit_window", format!("[{}, {}]", f.t_lo, f.t_hi));
            report.put("fit_points", f.n_points);
            report.put("fit_slope", f.slope);
            report.put("fit_target", -mu / 2.0);
            f.slope <= bound
        }
        LinearRate::FloorLimited => {
            report.put("fit_slope", "floor-limited");
            false
        }
    };
    report.verdict(
        "pl_slope",
        &format!("pre-floor slope of log mean gap against t at most {bound}"),
        passed,
    );
    Ok(())
}
