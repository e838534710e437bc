//! TOML run configurations.
//!
//! ```toml
//! scenario = "rates"
//! dynamics = "inertial"
//! seed = 7
//! n_paths = 64
//! output_dir = "runs"
//!
//! [problem]
//! kind = "quadratic"
//! matrix = [[1.0]]
//!
//! [damping]
//! kind = "power"
//! alpha = 4.0
//!
//! [diffusion.envelope]
//! kind = "power"
//! c = 0.5
//! q = 3.0
//!
//! [grid]
//! t0 = 1.0
//! horizon = 1000.0
//! h = 0.002
//!
//! [initial]
//! x0 = [1.0]
//! ```
//!
//! The seed can be overridden by the [`SEED_ENV`] environment variable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ProblemSpec;
use crate::schedules::{DampingSchedule, DiffusionSchedule, TikhonovSchedule, DEFAULT_S0};
use crate::sde::TimeGrid;
use crate::Vector;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "INERTIAL_SDE_SEED";

/// The experiment a run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Simulate,
    Rates,
    Consistency,
    TransformCheck,
    Tikhonov,
    Pl,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Simulate,
        Scenario::Rates,
        Scenario::Consistency,
        Scenario::TransformCheck,
        Scenario::Tikhonov,
        Scenario::Pl,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Simulate => "simulate",
            Scenario::Rates => "rates",
            Scenario::Consistency => "consistency",
            Scenario::TransformCheck => "transform-check",
            Scenario::Tikhonov => "tikhonov",
            Scenario::Pl => "pl",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::config("scenario", format!("unknown scenario `{s}`")))
    }
}

/// First-order (`dZ = -∇F dt + σ dW`) or inertial dynamics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dynamics {
    FirstOrder,
    #[default]
    Inertial,
}

/// Serializable damping; the origin `t0` comes from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DampingSpec {
    /// `γ(t) = α / t`.
    Power { alpha: f64 },
    /// `γ(t) = c`.
    Constant { c: f64 },
}

impl DampingSpec {
    pub fn build(&self, t0: f64) -> Result<DampingSchedule> {
        match *self {
            DampingSpec::Power { alpha } => DampingSchedule::power(alpha, t0),
            DampingSpec::Constant { c } => DampingSchedule::constant(c, t0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t0: f64,
    pub horizon: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub x0: Vec<f64>,
    /// Defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<Vec<f64>>,
}

/// Thresholds behind every verdict a scenario reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Checks {
    /// Share of the log-time range used by tail slope fits.
    pub window_fraction: f64,
    /// Target tail slope; defaults to −1 (first order) or −2 (inertial, `γ = α/t`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_slope: Option<f64>,
    pub slope_tolerance: f64,
    /// Upper bound on the median per-path tail ratio of `t² gap`.
    pub as_median_max: f64,
    /// Upper bound on the last-decade share of `∫ t³ |∇F|²`.
    pub integral_share_max: f64,
    pub sde_order: [f64; 2],
    pub ode_order: [f64; 2],
    /// Number of step sizes in consistency and transform studies.
    pub levels: usize,
    /// Minimal transform discrepancy order; defaults to 0.4 with noise, 0.9 without.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transform_min_order: Option<f64>,
    /// Upper bound on final over initial `E|X - x⋆|²`.
    pub reduction_max: f64,
    /// Lower bound on control over Tikhonov final distance.
    pub control_factor_min: f64,
    /// The PL fit passes when `slope <= -pl_slope_factor · μ/2`.
    pub pl_slope_factor: f64,
}

impl Default for Checks {
    fn default() -> Self {
        Self {
            window_fraction: 0.4,
            target_slope: None,
            slope_tolerance: 0.3,
            as_median_max: 1.0,
            integral_share_max: 0.2,
            sde_order: [0.8, 1.2],
            ode_order: [0.35, 0.65],
            levels: 4,
            transform_min_order: None,
            reduction_max: 0.01,
            control_factor_min: 5.0,
            pl_slope_factor: 0.8,
        }
    }
}

fn default_s0() -> f64 {
    DEFAULT_S0
}

fn default_records() -> usize {
    200
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// A complete, serializable description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub dynamics: Dynamics,
    pub seed: u64,
    pub n_paths: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Number of log-spaced record times in curves.
    #[serde(default = "default_records")]
    pub records: usize,
    /// Origin of the time change `θ(t0) = s0`.
    #[serde(default = "default_s0")]
    pub s0: f64,
    pub problem: ProblemSpec,
    pub damping: DampingSpec,
    pub diffusion: DiffusionSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tikhonov: Option<TikhonovSchedule>,
    pub grid: GridSpec,
    pub initial: InitialState,
    #[serde(default)]
    pub checks: Checks,
}

fn toml_error(e: toml::de::Error) -> Error {
    let key = e
        .message()
        .split('`')
        .nth(1)
        .filter(|_| e.message().contains("field"))
        .unwrap_or("config")
        .to_string();
    Error::Config {
        key,
        message: e.to_string().trim().to_string(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(toml_error)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_toml(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies [`SEED_ENV`] if it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| {
                Error::config("seed", format!("{SEED_ENV}={v} is not an unsigned integer"))
            })?;
        }
        Ok(())
    }

    /// Structural validation; each failure names the offending key.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.h > 0.0 && g.h.is_finite()) {
            return Err(Error::config("grid.h", "step must be positive"));
        }
        if !(g.horizon > g.t0) {
            return Err(Error::config("grid.horizon", "horizon must exceed t0"));
        }
        if self.n_paths == 0 {
            return Err(Error::config("n_paths", "at least one path is required"));
        }
        if self.records < 2 {
            return Err(Error::config(
                "records",
                "at least two record times are required",
            ));
        }
        let dim = self.problem.build()?.dim();
        if self.initial.x0.len() != dim {
            return Err(Error::config(
                "initial.x0",
                format!("expected {dim} entries, got {}", self.initial.x0.len()),
            ));
        }
        if let Some(v0) = &self.initial.v0 {
            if v0.len() != dim {
                return Err(Error::config(
                    "initial.v0",
                    format!("expected {dim} entries, got {}", v0.len()),
                ));
            }
        }
        self.damping.build(g.t0).map_err(|e| prefix("damping", e))?;
        self.diffusion
            .validate()
            .map_err(|e| prefix("diffusion", e))?;
        if let Some(ts) = &self.tikhonov {
            TikhonovSchedule::new(ts.r).map_err(|e| prefix("tikhonov", e))?;
        }
        let c = &self.checks;
        if !(c.window_fraction > 0.0 && c.window_fraction < 1.0) {
            return Err(Error::config(
                "checks.window_fraction",
                "must lie in (0, 1)",
            ));
        }
        if c.levels < 2 {
            return Err(Error::config(
                "checks.levels",
                "at least two step sizes are required",
            ));
        }
        TimeGrid::new(g.t0, g.horizon, g.h).map(|_| ())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.t0, self.grid.horizon, self.grid.h)
    }

    pub fn damping_schedule(&self) -> Result<DampingSchedule> {
        self.damping.build(self.grid.t0)
    }

    pub fn x0(&self) -> Vector {
        Vector::from_column_slice(&self.initial.x0)
    }

    pub fn v0(&self) -> Vector {
        match &self.initial.v0 {
            Some(v) => Vector::from_column_slice(v),
            None => Vector::zeros(self.initial.x0.len()),
        }
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Config { key, message } => Error::Config {
            key: format!("{section}.{key}"),
            message,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedules::{Envelope, StateFactor};
    use proptest::prelude::*;

    const EXAMPLE: &str = r#"
scenario = "rates"
seed = 7
n_paths = 64

[problem]
kind = "quadratic"
matrix = [[1.0]]

[damping]
kind = "power"
alpha = 4.0

[diffusion.envelope]
kind = "power"
c = 0.5
q = 3.0

[grid]
t0 = 1.0
horizon = 1000.0
h = 0.002

[initial]
x0 = [1.0]
"#;

    #[test]
    fn parses_the_documented_example() {
        let c = RunConfig::from_toml(EXAMPLE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.scenario, Scenario::Rates);
        assert_eq!(c.dynamics, Dynamics::Inertial);
        assert_eq!(c.s0, 1.0);
        assert_eq!(c.checks, Checks::default());
        assert_eq!(c.diffusion.envelope, Envelope::Power { c: 0.5, q: 3.0 });
        assert_eq!(c.v0(), Vector::zeros(1));
    }

    #[test]
    fn unknown_keys_are_named() {
        let bad = EXAMPLE.replace("n_paths = 64", "n_path = 64");
        match RunConfig::from_toml(&bad) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "n_path"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_names_the_key() {
        let bad = EXAMPLE.replace("h = 0.002", "h = -0.1");
        let c = RunConfig::from_toml(&bad).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "grid.h"));
        let bad = EXAMPLE.replace("alpha = 4.0", "alpha = 0.5");
        let c = RunConfig::from_toml(&bad).unwrap();
        assert!(
            matches!(c.validate(), Err(Error::Config { key, .. }) if key.starts_with("damping"))
        );
        let bad = EXAMPLE.replace("x0 = [1.0]", "x0 = [1.0, 2.0]");
        let c = RunConfig::from_toml(&bad).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "initial.x0"));
    }

    #[test]
    fn scenario_names() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("fly".parse::<Scenario>().is_err());
    }

    fn finite() -> impl Strategy<Value = f64> {
        -1e6..1e6f64
    }

    prop_compose! {
        fn arb_config()(
            scenario in prop::sample::select(Scenario::ALL.to_vec()),
            first in any::<bool>(),
            seed in any::<u64>(),
            n_paths in 1usize..1000,
            rows in prop::collection::vec(prop::collection::vec(finite(), 2), 1..4),
            vector in prop::option::of(prop::collection::vec(finite(), 2)),
            alpha in 1.01..10.0f64,
            constant_damping in any::<bool>(),
            c in 0.0..5.0f64,
            q in 0.0..5.0f64,
            saturating in any::<bool>(),
            r in prop::option::of(0.01..1.0f64),
            t0 in 0.0..10.0f64,
            h in 1e-4..1.0f64,
            x0 in prop::collection::vec(finite(), 2),
            target in prop::option::of(-3.0..0.0f64),
        ) -> RunConfig {
            RunConfig {
                scenario,
                dynamics: if first { Dynamics::FirstOrder } else { Dynamics::Inertial },
                seed,
                n_paths,
                output_dir: PathBuf::from("out"),
                records: 50,
                s0: 1.0,
                problem: ProblemSpec::LeastSquares { matrix: rows.clone(), target: vec![0.0; rows.len()] },
                damping: if constant_damping { DampingSpec::Constant { c: alpha } } else { DampingSpec::Power { alpha } },
                diffusion: DiffusionSchedule {
                    envelope: Envelope::Power { c, q },
                    state_factor: if saturating { StateFactor::Saturating } else { StateFactor::Unit },
                },
                tikhonov: r.map(|r| TikhonovSchedule { r }),
                grid: GridSpec { t0, horizon: t0 + 100.0, h },
                initial: InitialState { x0, v0: vector },
                checks: Checks { target_slope: target, ..Checks::default() },
            }
        }
    }

    proptest! {
        #[test]
        fn toml_round_trip(cfg in arb_config()) {
            let text = cfg.to_toml().unwrap();
            prop_assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        }
    }
}
