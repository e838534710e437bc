//! Damping, diffusion and Tikhonov schedules and the scales derived from them.
//!
//! For a damping `γ` the derived scales are
//!
//! * `p(t) = exp ∫_{t0}^t γ`,
//! * `Γ(t) = p(t) ∫_t^∞ ds / p(s)`, which solves `Γ' = γΓ - 1`,
//! * `θ(t) = s0 + ∫_{t0}^t Γ` (the time change) and its inverse,
//! * `A(t) = ∫_{t0}^t du / Γ(u)` and the averaging density `a(u) e^{A(u) - A(t)}`
//!   with `a = 1/Γ`.
//!
//! Builtin kinds use closed forms. Custom kinds go through adaptive quadrature
//! and require a declared non-increasing upper bound for `γ`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, Integral, Tolerance};
use crate::sde::TimeGrid;
use crate::Vector;

/// Default offset of the time change, `θ(t0) = s0`.
pub const DEFAULT_S0: f64 = 1.0;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied damping `γ` with a declared non-increasing upper bound.
#[derive(Clone)]
pub struct CustomDamping {
    gamma: ScalarFn,
    upper_bound: ScalarFn,
}

impl fmt::Debug for CustomDamping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomDamping(..)")
    }
}

#[derive(Debug, Clone)]
pub enum DampingKind {
    /// `γ(t) = α / t`, with `t0 > 0` and `α > 1`.
    PowerOverT {
        alpha: f64,
    },
    /// `γ(t) = c`.
    Constant {
        c: f64,
    },
    Custom(CustomDamping),
}

/// A viscous damping schedule `γ` on `[t0, ∞)`.
#[derive(Debug, Clone)]
pub struct DampingSchedule {
    kind: DampingKind,
    t0: f64,
}

/// Result of checking the damping hypothesis: `γ` is bounded above by a
/// non-increasing function and `∫_{t0}^∞ 1/p < ∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct DampingHypothesis {
    pub bounded_by_non_increasing: bool,
    pub inverse_p_integrable: bool,
    /// `false` for builtin kinds (decided analytically).
    pub heuristic: bool,
    pub note: String,
}

impl DampingHypothesis {
    pub fn holds(&self) -> bool {
        self.bounded_by_non_increasing && self.inverse_p_integrable
    }
}

const INNER_TOL: Tolerance = Tolerance {
    abs: 1e-14,
    rel: 1e-12,
    max_intervals: 2000,
};

impl DampingSchedule {
    /// `γ(t) = α/t`. The tail integral defining `Γ` diverges for `α <= 1`.
    pub fn power(alpha: f64, t0: f64) -> Result<Self> {
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(Error::config(
                "alpha",
                format!(
                    "power damping needs alpha > 1 (tail integral of 1/p diverges), got {alpha}"
                ),
            ));
        }
        if !(t0 > 0.0) || !t0.is_finite() {
            return Err(Error::config(
                "t0",
                format!("power damping needs t0 > 0, got {t0}"),
            ));
        }
        Ok(Self {
            kind: DampingKind::PowerOverT { alpha },
            t0,
        })
    }

    /// `γ(t) = c`.
    pub fn constant(c: f64, t0: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::config(
                "c",
                format!("constant damping needs c > 0, got {c}"),
            ));
        }
        if !t0.is_finite() {
            return Err(Error::config("t0", "t0 must be finite"));
        }
        Ok(Self {
            kind: DampingKind::Constant { c },
            t0,
        })
    }

    /// A custom damping. `upper_bound` must be non-increasing and dominate `gamma`;
    /// both are checked on a sample grid by [`DampingSchedule::hypothesis`].
    pub fn custom(
        gamma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        upper_bound: impl Fn(f64) -> f64 + Send + Sync + 'static,
        t0: f64,
    ) -> Result<Self> {
        if !t0.is_finite() {
            return Err(Error::config("t0", "t0 must be finite"));
        }
        let d = Self {
            kind: DampingKind::Custom(CustomDamping {
                gamma: Arc::new(gamma),
                upper_bound: Arc::new(upper_bound),
            }),
            t0,
        };
        let report = d.hypothesis();
        if !report.bounded_by_non_increasing {
            return Err(Error::Hypothesis(report.note));
        }
        Ok(d)
    }

    pub fn kind(&self) -> &DampingKind {
        &self.kind
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn is_custom(&self) -> bool {
        matches!(self.kind, DampingKind::Custom(_))
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if t >= self.t0 && t.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "t = {t} is outside [t0, ∞) with t0 = {}",
                self.t0
            )))
        }
    }

    /// `γ(t)`.
    pub fn gamma(&self, t: f64) -> f64 {
        match &self.kind {
            DampingKind::PowerOverT { alpha } => alpha / t,
            DampingKind::Constant { c } => *c,
            DampingKind::Custom(c) => (c.gamma)(t),
        }
    }

    /// `ln p(t) = ∫_{t0}^t γ`.
    pub fn log_p(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok(match &self.kind {
            DampingKind::PowerOverT { alpha } => alpha * (t / self.t0).ln(),
            DampingKind::Constant { c } => c * (t - self.t0),
            DampingKind::Custom(c) => {
                quadrature::integrate(&*c.gamma, self.t0, t, INNER_TOL)?.value
            }
        })
    }

    /// `p(t) = exp ∫_{t0}^t γ`.
    pub fn p(&self, t: f64) -> Result<f64> {
        self.log_p(t).map(f64::exp)
    }

    /// `Γ(t) = p(t) ∫_t^∞ ds/p(s)`.
    pub fn big_gamma(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        match &self.kind {
            DampingKind::PowerOverT { alpha } => Ok(t / (alpha - 1.0)),
            DampingKind::Constant { c } => Ok(1.0 / c),
            DampingKind::Custom(c) => custom_big_gamma(&*c.gamma, t).map(|r| r.value),
        }
    }

    /// `Γ(t)` for custom kinds with the quadrature error estimate (tail included).
    pub fn big_gamma_with_error(&self, t: f64) -> Result<Integral> {
        self.check_t(t)?;
        match &self.kind {
            DampingKind::Custom(c) => custom_big_gamma(&*c.gamma, t),
            _ => Ok(Integral {
                value: self.big_gamma(t)?,
                error: 0.0,
                evaluations: 0,
            }),
        }
    }

    /// `θ(t) = s0 + ∫_{t0}^t Γ`.
    pub fn theta(&self, s0: f64, t: f64) -> Result<f64> {
        self.check_t(t)?;
        let t0 = self.t0;
        Ok(match &self.kind {
            DampingKind::PowerOverT { alpha } => s0 + (t * t - t0 * t0) / (2.0 * (alpha - 1.0)),
            DampingKind::Constant { c } => s0 + (t - t0) / c,
            DampingKind::Custom(_) => {
                s0 + quadrature::integrate(
                    |u| self.big_gamma(u).unwrap_or(f64::NAN),
                    t0,
                    t,
                    Tolerance::new(1e-11, 1e-10),
                )?
                .value
            }
        })
    }

    /// Inverse of [`theta`](Self::theta); `s >= s0`.
    pub fn theta_inv(&self, s0: f64, s: f64) -> Result<f64> {
        if !(s >= s0) || !s.is_finite() {
            return Err(Error::Domain(format!(
                "s = {s} is outside [s0, ∞) with s0 = {s0}"
            )));
        }
        let t0 = self.t0;
        match &self.kind {
            DampingKind::PowerOverT { alpha } => {
                Ok((t0 * t0 + 2.0 * (alpha - 1.0) * (s - s0)).sqrt())
            }
            DampingKind::Constant { c } => Ok(t0 + c * (s - s0)),
            DampingKind::Custom(_) => {
                if s == s0 {
                    return Ok(t0);
                }
                let mut width = t0.abs().max(1.0);
                let mut hi = t0 + width;
                while self.theta(s0, hi)? < s {
                    width *= 2.0;
                    hi = t0 + width;
                    if !hi.is_finite() {
                        return Err(Error::Numeric(format!("cannot bracket θ⁻¹({s})")));
                    }
                }
                quadrature::bisect(|t| self.theta(s0, t).unwrap_or(f64::NAN) - s, t0, hi, 1e-10)
            }
        }
    }

    /// Averaging weight `a(t) = 1/Γ(t)`.
    pub fn a(&self, t: f64) -> Result<f64> {
        self.big_gamma(t).map(|g| 1.0 / g)
    }

    /// `A(t) = ∫_{t0}^t du/Γ(u)`.
    pub fn big_a(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok(match &self.kind {
            DampingKind::PowerOverT { alpha } => (alpha - 1.0) * (t / self.t0).ln(),
            DampingKind::Constant { c } => c * (t - self.t0),
            DampingKind::Custom(_) => {
                quadrature::integrate(
                    |u| self.a(u).unwrap_or(f64::NAN),
                    self.t0,
                    t,
                    Tolerance::new(1e-11, 1e-10),
                )?
                .value
            }
        })
    }

    /// `e^{-A(t)}`, in `(0, 1]`.
    pub fn exp_neg_a(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok(match &self.kind {
            DampingKind::PowerOverT { alpha } => (self.t0 / t).powf(alpha - 1.0),
            DampingKind::Constant { c } => (-c * (t - self.t0)).exp(),
            DampingKind::Custom(_) => (-self.big_a(t)?).exp(),
        })
    }

    /// Density of the averaging measure at `u <= t`: `a(u) e^{A(u) - A(t)}`.
    pub fn averaging_density(&self, u: f64, t: f64) -> Result<f64> {
        self.check_t(u)?;
        if u > t {
            return Err(Error::Domain(format!("u = {u} exceeds t = {t}")));
        }
        Ok(match &self.kind {
            DampingKind::PowerOverT { alpha } => (alpha - 1.0) / u * (u / t).powf(alpha - 1.0),
            DampingKind::Constant { c } => c * (-c * (t - u)).exp(),
            DampingKind::Custom(_) => self.a(u)? * (self.big_a(u)? - self.big_a(t)?).exp(),
        })
    }

    /// `I[h](t) = ∫_{t0}^t h(u) a(u) e^{A(u) - A(t)} du`.
    pub fn i_transform(&self, h: impl Fn(f64) -> f64, t: f64) -> Result<f64> {
        self.check_t(t)?;
        let r = quadrature::integrate(
            |u| {
                let hu = h(u);
                if hu == 0.0 {
                    0.0
                } else {
                    hu * self.averaging_density(u, t).unwrap_or(f64::NAN)
                }
            },
            self.t0,
            t,
            Tolerance::new(1e-13, 1e-9),
        )
        .map_err(|e| Error::Numeric(format!("I[h]({t}): {e}")))?;
        Ok(r.value)
    }

    /// Checks the damping hypothesis; analytic for builtin kinds, sampled for custom.
    pub fn hypothesis(&self) -> DampingHypothesis {
        match &self.kind {
            DampingKind::PowerOverT { alpha } => DampingHypothesis {
                bounded_by_non_increasing: true,
                inverse_p_integrable: *alpha > 1.0,
                heuristic: false,
                note: format!("γ = {alpha}/t is non-increasing; ∫ 1/p < ∞ iff α > 1"),
            },
            DampingKind::Constant { c } => DampingHypothesis {
                bounded_by_non_increasing: true,
                inverse_p_integrable: *c > 0.0,
                heuristic: false,
                note: format!("γ ≡ {c}"),
            },
            DampingKind::Custom(c) => {
                let t0 = self.t0;
                let scale = t0.abs().max(1.0);
                let samples: Vec<f64> = (0..=400)
                    .map(|i| t0 + scale * (10f64.powf(i as f64 / 100.0) - 1.0))
                    .collect();
                let mut note = String::new();
                let mut bounded = true;
                let mut prev = f64::INFINITY;
                for &t in &samples {
                    let (g, ub) = ((c.gamma)(t), (c.upper_bound)(t));
                    if !(g >= 0.0) || !(g <= ub * (1.0 + 1e-12)) {
                        bounded = false;
                        note =
                            format!("γ({t}) = {g} is negative or exceeds the declared bound {ub}");
                        break;
                    }
                    if ub > prev * (1.0 + 1e-12) {
                        bounded = false;
                        note = format!("declared upper bound increases near t = {t}");
                        break;
                    }
                    prev = ub;
                }
                let integrable = custom_big_gamma(&*c.gamma, t0).is_ok();
                if bounded {
                    note = if integrable {
                        "sampled check on [t0, t0 + 1e4·max(|t0|, 1)]".into()
                    } else {
                        "∫ 1/p appears divergent (tail of Γ(t0) did not decay)".into()
                    };
                }
                DampingHypothesis {
                    bounded_by_non_increasing: bounded,
                    inverse_p_integrable: integrable,
                    heuristic: true,
                    note,
                }
            }
        }
    }
}

/// `Γ(t) = ∫_t^∞ exp(-∫_t^s γ) ds`, truncated at `t + 1e3·max(|t|, 1)` on
/// doubling panels; the remainder is extrapolated from the panel decay ratio.
fn custom_big_gamma(gamma: &(dyn Fn(f64) -> f64 + Send + Sync), t: f64) -> Result<Integral> {
    let scale = t.abs().max(1.0);
    let end = t + 1e3 * scale;
    let mut a = t;
    let mut width = 0.5 * scale;
    let mut log_decay = 0.0; // ∫_t^a γ
    let mut total = 0.0;
    let mut error = 0.0;
    let mut evaluations = 0;
    let mut last = f64::NAN;
    let mut prev = f64::NAN;
    while a < end {
        let b = (a + width).min(end);
        let panel = quadrature::integrate(
            |s| {
                let inner = quadrature::integrate(gamma, a, s, INNER_TOL)
                    .map(|r| r.value)
                    .unwrap_or(f64::NAN);
                (-(log_decay + inner)).exp()
            },
            a,
            b,
            INNER_TOL,
        )?;
        total += panel.value;
        error += panel.error;
        evaluations += panel.evaluations;
        log_decay += quadrature::integrate(gamma, a, b, INNER_TOL)?.value;
        prev = last;
        last = panel.value;
        a = b;
        width *= 2.0;
        if panel.value <= 1e-17 * total && prev <= 1e-15 * total {
            break;
        }
    }
    let ratio = last / prev;
    let tail = if last <= 1e-17 * total {
        0.0
    } else if ratio.is_finite() && ratio < 0.9 {
        last * ratio / (1.0 - ratio)
    } else {
        f64::INFINITY
    };
    if !tail.is_finite() {
        return Err(Error::Numeric(format!(
            "Γ({t}): panels of ∫ 1/p beyond {end} do not decay geometrically; \
             the damping may violate the integrability hypothesis"
        )));
    }
    // Geometric extrapolation is exact for power-law tails; charge a share
    // of it to the error estimate for everything else.
    Ok(Integral {
        value: total + tail,
        error: error + 0.05 * tail,
        evaluations,
    })
}

/// Node values of the derived scales on a time grid, built once and shared.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTable {
    pub grid: TimeGrid,
    pub s0: f64,
    pub t: Vec<f64>,
    pub gamma: Vec<f64>,
    pub big_gamma: Vec<f64>,
    pub theta: Vec<f64>,
    pub exp_neg_a: Vec<f64>,
}

impl ScaleTable {
    /// Closed forms for builtin kinds. Custom kinds integrate `Γ' = γΓ - 1`
    /// backwards from a quadrature value at the horizon (the stable direction)
    /// and accumulate `θ` and `A` by Simpson's rule with Hermite midpoints.
    pub fn new(d: &DampingSchedule, s0: f64, grid: &TimeGrid) -> Result<Self> {
        let t: Vec<f64> = grid.nodes().collect();
        if t[0] < d.t0() {
            return Err(Error::Domain(format!(
                "grid starts at {} before the damping origin t0 = {}",
                t[0],
                d.t0()
            )));
        }
        let gamma: Vec<f64> = t.iter().map(|&u| d.gamma(u)).collect();
        if !d.is_custom() {
            return Ok(Self {
                grid: *grid,
                s0,
                big_gamma: t.iter().map(|&u| d.big_gamma(u)).collect::<Result<_>>()?,
                theta: t.iter().map(|&u| d.theta(s0, u)).collect::<Result<_>>()?,
                exp_neg_a: t.iter().map(|&u| d.exp_neg_a(u)).collect::<Result<_>>()?,
                t,
                gamma,
            });
        }
        let n = t.len();
        let h = grid.step();
        let rhs = |u: f64, g: f64| d.gamma(u) * g - 1.0;
        let mut big_gamma = vec![0.0; n];
        big_gamma[n - 1] = d.big_gamma(t[n - 1])?;
        for k in (0..n - 1).rev() {
            let (u, g) = (t[k + 1], big_gamma[k + 1]);
            let k1 = rhs(u, g);
            let k2 = rhs(u - 0.5 * h, g - 0.5 * h * k1);
            let k3 = rhs(u - 0.5 * h, g - 0.5 * h * k2);
            let k4 = rhs(u - h, g - h * k3);
            big_gamma[k] = g - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        // Anchor θ(t0) and A(t0) exactly; the backward sweep starts from the
        // horizon so the first node may carry RK4 error only.
        let g0 = d.big_gamma(t[0])?;
        let drift = big_gamma[0] - g0;
        if drift.abs() > 1e-6 * g0 {
            log::warn!(
                "custom damping: backward Γ sweep differs from quadrature at t0 by {drift:e}"
            );
        }
        let mut theta = vec![
            s0 + if t[0] > d.t0() {
                d.theta(0.0, t[0])?
            } else {
                0.0
            };
            n
        ];
        let mut big_a = vec![if t[0] > d.t0() { d.big_a(t[0])? } else { 0.0 }; n];
        for k in 0..n - 1 {
            let (ga, gb) = (big_gamma[k], big_gamma[k + 1]);
            let (da, db) = (rhs(t[k], ga), rhs(t[k + 1], gb));
            let gm = 0.5 * (ga + gb) + h * (da - db) / 8.0;
            theta[k + 1] = theta[k] + h / 6.0 * (ga + 4.0 * gm + gb);
            big_a[k + 1] = big_a[k] + h / 6.0 * (1.0 / ga + 4.0 / gm + 1.0 / gb);
        }
        Ok(Self {
            grid: *grid,
            s0,
            t,
            gamma,
            big_gamma,
            theta,
            exp_neg_a: big_a.iter().map(|a| (-a).exp()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Diffusion

/// Time envelope `σ∞(t)` of the diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    Zero,
    Constant {
        c: f64,
    },
    /// `c · t^{-q}`.
    Power {
        c: f64,
        q: f64,
    },
    /// `c · e^{-a t}`.
    Exponential {
        c: f64,
        a: f64,
    },
}

/// Scalar state coupling `D(x)` of the diffusion `σ(t, x) = σ∞(t) D(x) I`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateFactor {
    /// `D ≡ 1`.
    #[default]
    Unit,
    /// `D(x) = 1/√(1 + |x|²)`, bounded by 1 and Lipschitz with constant `2/(3√3)`.
    Saturating,
}

impl StateFactor {
    pub fn eval(&self, x: &Vector) -> f64 {
        match self {
            StateFactor::Unit => 1.0,
            StateFactor::Saturating => 1.0 / (1.0 + x.norm_squared()).sqrt(),
        }
    }

    /// Lipschitz constant of `D`.
    pub fn l0(&self) -> f64 {
        match self {
            StateFactor::Unit => 0.0,
            StateFactor::Saturating => 2.0 / (3.0 * 3f64.sqrt()),
        }
    }
}

/// A diffusion coefficient `σ(t, x)`, acting as a scalar multiple of the identity.
pub trait Diffusion: Send + Sync {
    fn coefficient(&self, t: f64, x: &Vector) -> f64;
    /// `true` when the coefficient vanishes identically.
    fn is_zero(&self) -> bool {
        false
    }
}

/// `σ(t, x) = σ∞(t) · D(x) · I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSchedule {
    pub envelope: Envelope,
    #[serde(default)]
    pub state_factor: StateFactor,
}

impl DiffusionSchedule {
    pub fn new(envelope: Envelope, state_factor: StateFactor) -> Result<Self> {
        let ok = match envelope {
            Envelope::Zero => true,
            Envelope::Constant { c } => c >= 0.0 && c.is_finite(),
            Envelope::Power { c, q } => c >= 0.0 && c.is_finite() && q >= 0.0 && q.is_finite(),
            Envelope::Exponential { c, a } => {
                c >= 0.0 && c.is_finite() && a >= 0.0 && a.is_finite()
            }
        };
        if !ok {
            return Err(Error::config(
                "envelope",
                format!("envelope parameters must be finite and nonnegative: {envelope:?}"),
            ));
        }
        Ok(Self {
            envelope,
            state_factor,
        })
    }

    pub fn zero() -> Self {
        Self {
            envelope: Envelope::Zero,
            state_factor: StateFactor::Unit,
        }
    }

    /// `c t^{-q}` with unit state factor.
    pub fn power(c: f64, q: f64) -> Result<Self> {
        Self::new(Envelope::Power { c, q }, StateFactor::Unit)
    }

    /// `c e^{-a t}` with unit state factor.
    pub fn exponential(c: f64, a: f64) -> Result<Self> {
        Self::new(Envelope::Exponential { c, a }, StateFactor::Unit)
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.envelope, self.state_factor).map(|_| ())
    }

    /// `σ∞(t)`.
    pub fn sigma_inf(&self, t: f64) -> f64 {
        match self.envelope {
            Envelope::Zero => 0.0,
            Envelope::Constant { c } => c,
            Envelope::Power { c, q } => c * t.powf(-q),
            Envelope::Exponential { c, a } => c * (-a * t).exp(),
        }
    }

    /// `sup_{t >= t0} σ∞(t)` (the envelopes are non-increasing).
    pub fn sigma_star(&self, t0: f64) -> f64 {
        self.sigma_inf(t0)
    }

    pub fn l0(&self) -> f64 {
        self.state_factor.l0()
    }
}

impl Diffusion for DiffusionSchedule {
    fn coefficient(&self, t: f64, x: &Vector) -> f64 {
        match self.envelope {
            Envelope::Zero => 0.0,
            _ => self.sigma_inf(t) * self.state_factor.eval(x),
        }
    }

    fn is_zero(&self) -> bool {
        match self.envelope {
            Envelope::Zero => true,
            Envelope::Constant { c }
            | Envelope::Power { c, .. }
            | Envelope::Exponential { c, .. } => c == 0.0,
        }
    }
}

/// The s-time diffusion `σ1(s, y) = √Γ(t) σ(t, y)` with `t = θ⁻¹(s)`, under
/// which the scaled first-order system reproduces a second-order system
/// driven by `σ`.
#[derive(Debug, Clone)]
pub struct TimeChanged<'a, D> {
    pub inner: &'a D,
    pub damping: &'a DampingSchedule,
    pub s0: f64,
}

impl<D: Diffusion> Diffusion for TimeChanged<'_, D> {
    fn coefficient(&self, s: f64, x: &Vector) -> f64 {
        let t = self.damping.theta_inv(self.s0, s).unwrap_or(f64::NAN);
        let g = self.damping.big_gamma(t).unwrap_or(f64::NAN);
        g.sqrt() * self.inner.coefficient(t, x)
    }

    fn is_zero(&self) -> bool {
        self.inner.is_zero()
    }
}

// ---------------------------------------------------------------------------
// Tikhonov

/// `ε(t) = θ(t)^{-r}` with `r ∈ (0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TikhonovSchedule {
    pub r: f64,
}

impl TikhonovSchedule {
    pub fn new(r: f64) -> Result<Self> {
        if r > 0.0 && r <= 1.0 {
            Ok(Self { r })
        } else {
            Err(Error::config(
                "r",
                format!("Tikhonov exponent must lie in (0, 1], got {r}"),
            ))
        }
    }

    /// `ε` as a function of the time-change value `θ`.
    pub fn epsilon(&self, theta: f64) -> f64 {
        theta.powf(-self.r)
    }

    /// `ε(t) = θ(t)^{-r}`.
    pub fn epsilon_at(&self, d: &DampingSchedule, s0: f64, t: f64) -> Result<f64> {
        Ok(self.epsilon(d.theta(s0, t)?))
    }

    /// Sufficient range `r > 2p/(2p + 1)` for an error bound of exponent `p`.
    pub fn in_sufficient_range(&self, p: f64) -> bool {
        self.r > 2.0 * p / (2.0 * p + 1.0)
    }
}

// ---------------------------------------------------------------------------
// Integrability classes

/// Which noise-integrability conditions an envelope satisfies under a damping.
///
/// * `traj_ok`: `Γ σ∞ ∈ L²` (trajectory convergence),
/// * `rate_ok`: `√θ Γ σ∞ ∈ L²` (rate `O(1/θ)`),
/// * `fast_ok`: `t² σ∞ ∈ L²` (fast rate for `γ = α/t`),
/// * `first_order_ok`: `σ∞ ∈ L²`; `first_order_rate_ok`: `t σ∞² ∈ L¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrabilityReport {
    pub traj_ok: bool,
    pub rate_ok: bool,
    pub fast_ok: bool,
    pub first_order_ok: bool,
    pub first_order_rate_ok: bool,
    /// Critical `q` for `σ∞ = c t^{-q}`: each condition needs `q` strictly above it.
    pub traj_threshold: Option<f64>,
    pub rate_threshold: Option<f64>,
    pub fast_threshold: Option<f64>,
    pub first_order_threshold: Option<f64>,
    pub first_order_rate_threshold: Option<f64>,
    /// Decay exponent `q` of the envelope, when it is a power law.
    pub q: Option<f64>,
    /// Set when the classification comes from a sampled tail test.
    pub heuristic: bool,
}

impl IntegrabilityReport {
    fn requirement(&self, name: &str, threshold: Option<f64>) -> String {
        match threshold {
            Some(th) => format!("{name} requires q > {}", fmt_threshold(th)),
            None => format!("{name} false"),
        }
    }

    /// Error naming the failed predicate, if `name` is not satisfied.
    pub fn require(&self, name: &str) -> Result<()> {
        let (ok, th) = match name {
            "traj_ok" => (self.traj_ok, self.traj_threshold),
            "rate_ok" => (self.rate_ok, self.rate_threshold),
            "fast_ok" => (self.fast_ok, self.fast_threshold),
            "first_order_ok" => (self.first_order_ok, self.first_order_threshold),
            "first_order_rate_ok" => (self.first_order_rate_ok, self.first_order_rate_threshold),
            other => {
                return Err(Error::config(
                    "requires",
                    format!("unknown predicate `{other}`"),
                ))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Hypothesis(format!(
                "{} ({name} false)",
                self.requirement(name, th)
            )))
        }
    }
}

fn fmt_threshold(th: f64) -> String {
    if (th * 2.0).fract() == 0.0 && th.fract() != 0.0 {
        format!("{}/2", (th * 2.0) as i64)
    } else {
        format!("{th}")
    }
}

/// `∫^∞ t^e dt < ∞` iff `e < -1`; power integrand exponent for each class.
fn power_class(q: f64, power_damping: bool) -> [(bool, f64); 5] {
    // Thresholds on q for σ∞ = c t^{-q}.
    let (traj, rate) = if power_damping {
        (1.5, 2.5)
    } else {
        (0.5, 1.0)
    };
    let ths = [traj, rate, 2.5, 0.5, 1.0];
    ths.map(|th| (q > th, th))
}

/// Classifies the pair (damping, envelope). Builtin damping kinds with
/// zero, constant, power or exponential envelopes are decided analytically;
/// custom damping falls back to a sampled log–log tail slope test.
pub fn integrability_class(d: &DampingSchedule, sigma: &DiffusionSchedule) -> IntegrabilityReport {
    let zero = sigma.is_zero();
    let all = |ok: bool, q: Option<f64>, heuristic: bool| IntegrabilityReport {
        traj_ok: ok,
        rate_ok: ok,
        fast_ok: ok,
        first_order_ok: ok,
        first_order_rate_ok: ok,
        traj_threshold: None,
        rate_threshold: None,
        fast_threshold: None,
        first_order_threshold: None,
        first_order_rate_threshold: None,
        q,
        heuristic,
    };
    if zero {
        return all(true, None, d.is_custom());
    }
    match (&d.kind, sigma.envelope) {
        (DampingKind::Custom(_), _) => numeric_class(d, sigma),
        (_, Envelope::Exponential { a, .. }) => all(a > 0.0, None, false),
        (kind, env) => {
            let q = match env {
                Envelope::Power { q, .. } => q,
                _ => 0.0, // constant envelope
            };
            let [traj, rate, fast, fo, for_] =
                power_class(q, matches!(kind, DampingKind::PowerOverT { .. }));
            IntegrabilityReport {
                traj_ok: traj.0,
                rate_ok: rate.0,
                fast_ok: fast.0,
                first_order_ok: fo.0,
                first_order_rate_ok: for_.0,
                traj_threshold: Some(traj.1),
                rate_threshold: Some(rate.1),
                fast_threshold: Some(fast.1),
                first_order_threshold: Some(fo.1),
                first_order_rate_threshold: Some(for_.1),
                q: Some(q),
                heuristic: false,
            }
        }
    }
}

fn numeric_class(d: &DampingSchedule, sigma: &DiffusionSchedule) -> IntegrabilityReport {
    // Integrable tails are judged by the log–log slope of the squared
    // integrand over the last decade of [t0, t0 + 1e4·max(|t0|, 1)].
    let t0 = d.t0();
    let scale = t0.abs().max(1.0);
    let t_hi = t0 + 1e4 * scale;
    let t_lo = t0 + 1e3 * scale;
    let slope = |w: &dyn Fn(f64) -> f64| -> bool {
        let (a, b) = (w(t_lo), w(t_hi));
        if b == 0.0 {
            return true;
        }
        if !(a > 0.0 && b.is_finite()) {
            return false;
        }
        let s = (b / a).ln() / (t_hi / t_lo).ln();
        s < -1.05
    };
    let gam = |t: f64| d.big_gamma(t).unwrap_or(f64::NAN);
    let th = |t: f64| d.theta(0.0, t).unwrap_or(f64::NAN);
    let s = |t: f64| sigma.sigma_inf(t);
    IntegrabilityReport {
        traj_ok: slope(&|t| (gam(t) * s(t)).powi(2)),
        rate_ok: slope(&|t| th(t) * (gam(t) * s(t)).powi(2)),
        fast_ok: slope(&|t| (t * t * s(t)).powi(2)),
        first_order_ok: slope(&|t| s(t).powi(2)),
        first_order_rate_ok: slope(&|t| t * s(t).powi(2)),
        traj_threshold: None,
        rate_threshold: None,
        fast_threshold: None,
        first_order_threshold: None,
        first_order_rate_threshold: None,
        q: match sigma.envelope {
            Envelope::Power { q, .. } => Some(q),
            _ => None,
        },
        heuristic: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn power4() -> DampingSchedule {
        DampingSchedule::power(4.0, 1.0).unwrap()
    }

    fn custom_power(alpha: f64, t0: f64) -> DampingSchedule {
        DampingSchedule::custom(move |t| alpha / t, move |t| alpha / t, t0).unwrap()
    }

    fn log_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn big_gamma_examples() {
        assert_eq!(power4().big_gamma(6.0).unwrap(), 2.0);
        let c = DampingSchedule::constant(2.0, 0.0).unwrap();
        assert_eq!(c.big_gamma(17.0).unwrap(), 0.5);
        let g = custom_power(4.0, 1.0).big_gamma(6.0).unwrap();
        assert!((g - 2.0).abs() < 1e-6, "{g}");
    }

    #[test]
    fn alpha_at_most_one_is_rejected() {
        assert!(matches!(
            DampingSchedule::power(1.0, 1.0),
            Err(Error::Config { .. })
        ));
        assert!(DampingSchedule::power(0.5, 1.0).is_err());
    }

    #[test]
    fn theta_examples() {
        assert_eq!(
            DampingSchedule::power(4.0, 1.0)
                .unwrap()
                .theta(0.0, 5.0)
                .unwrap(),
            4.0
        );
        let c = DampingSchedule::constant(2.0, 0.0).unwrap();
        assert_eq!(c.theta(0.0, 4.0).unwrap(), 2.0);
        assert_eq!(power4().theta(1.5, 1.0).unwrap(), 1.5);
        assert!(matches!(power4().theta(0.0, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn exp_neg_a_examples() {
        assert_relative_eq!(
            power4().exp_neg_a(10.0).unwrap(),
            1e-3,
            max_relative = 1e-14
        );
        assert_eq!(power4().exp_neg_a(1.0).unwrap(), 1.0);
        let c = DampingSchedule::constant(2.0, 0.0).unwrap();
        assert_relative_eq!(
            c.exp_neg_a(3.0).unwrap(),
            (-6.0f64).exp(),
            max_relative = 1e-14
        );
        let oracle = quadrature::quad(|u| 1.0 / c.big_gamma(u).unwrap(), 0.0, 3.0).unwrap();
        assert_relative_eq!(oracle, 6.0, max_relative = 1e-12);
    }

    #[test]
    fn i_transform_examples() {
        let d = power4();
        for &t in &[2.0, 10.0, 100.0] {
            let one = d.i_transform(|_| 1.0, t).unwrap();
            assert!((one - (1.0 - d.exp_neg_a(t).unwrap())).abs() < 1e-9);
            assert_eq!(d.i_transform(|_| 0.0, t).unwrap(), 0.0);
        }
        let c = DampingSchedule::constant(0.7, 0.0).unwrap();
        let one = c.i_transform(|_| 1.0, 5.0).unwrap();
        assert!((one - (1.0 - c.exp_neg_a(5.0).unwrap())).abs() < 1e-9);
    }

    #[test]
    fn i_transform_of_inverse_theta_is_order_t_minus_two() {
        let d = power4();
        let s0 = 1.0;
        let mut max_ratio: f64 = 0.0;
        for t in log_points(10.0, 1000.0, 12) {
            let v = d.i_transform(|u| 1.0 / d.theta(s0, u).unwrap(), t).unwrap();
            max_ratio = max_ratio.max(v * t * t);
            assert!(v * t * t < 20.0, "t = {t}: {}", v * t * t);
        }
        assert!(max_ratio > 1.0);
    }

    #[test]
    fn gamma_ode_by_central_differences() {
        let schedules = [
            power4(),
            DampingSchedule::power(2.5, 0.5).unwrap(),
            DampingSchedule::constant(1.3, 0.0).unwrap(),
            custom_power(3.0, 1.0),
            DampingSchedule::custom(|t| 2.0 + 1.0 / t, |t| 2.0 + 1.0 / t, 1.0).unwrap(),
        ];
        for d in &schedules {
            let lo = d.t0().max(0.1) + 0.05;
            for t in log_points(lo, 50.0, 50) {
                let h = 1e-3 * t.max(1.0);
                let deriv = (d.big_gamma(t + h).unwrap() - d.big_gamma(t - h).unwrap()) / (2.0 * h);
                let expect = d.gamma(t) * d.big_gamma(t).unwrap() - 1.0;
                assert!(
                    (deriv - expect).abs() < 1e-6,
                    "{d:?} at {t}: {deriv} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for (alpha, t0) in [(4.0, 1.0), (3.0, 0.5), (2.2, 2.0)] {
            let exact = DampingSchedule::power(alpha, t0).unwrap();
            let numeric = custom_power(alpha, t0);
            for t in log_points(t0, 30.0 * t0, 6) {
                assert_relative_eq!(
                    numeric.big_gamma(t).unwrap(),
                    exact.big_gamma(t).unwrap(),
                    max_relative = 1e-4
                );
                assert_relative_eq!(
                    numeric.theta(1.0, t).unwrap(),
                    exact.theta(1.0, t).unwrap(),
                    max_relative = 1e-4
                );
                assert_relative_eq!(
                    numeric.big_a(t).unwrap(),
                    exact.big_a(t).unwrap(),
                    max_relative = 1e-4,
                    epsilon = 1e-9
                );
            }
        }
        let c = DampingSchedule::constant(2.0, 0.0).unwrap();
        let cn = DampingSchedule::custom(|_| 2.0, |_| 2.0, 0.0).unwrap();
        for t in [0.5, 1.0, 4.0] {
            assert_relative_eq!(cn.big_gamma(t).unwrap(), 0.5, max_relative = 1e-4);
            assert_relative_eq!(
                cn.theta(0.0, t).unwrap(),
                c.theta(0.0, t).unwrap(),
                max_relative = 1e-4
            );
            assert_relative_eq!(
                cn.big_a(t).unwrap(),
                c.big_a(t).unwrap(),
                max_relative = 1e-4
            );
        }
    }

    #[test]
    fn exp_neg_a_times_exp_a_is_one() {
        for d in [
            power4(),
            DampingSchedule::constant(0.3, 1.0).unwrap(),
            custom_power(4.0, 1.0),
        ] {
            for t in log_points(1.0, 40.0, 8) {
                let prod = d.exp_neg_a(t).unwrap() * d.big_a(t).unwrap().exp();
                assert!((prod - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn theta_inverse_roundtrip() {
        for d in [
            power4(),
            DampingSchedule::constant(2.0, 0.0).unwrap(),
            custom_power(4.0, 1.0),
        ] {
            for t in log_points(d.t0().max(0.5), 40.0, 8) {
                let s = d.theta(1.0, t).unwrap();
                let back = d.theta_inv(1.0, s).unwrap();
                assert!((back - t).abs() <= 1e-9 * t, "{t} -> {s} -> {back}");
            }
        }
    }

    #[test]
    fn big_a_is_unbounded_looking() {
        for d in [power4(), DampingSchedule::constant(0.5, 0.0).unwrap()] {
            let pts = log_points(1.0, 1e6, 25);
            let vals: Vec<f64> = pts.iter().map(|&t| d.big_a(t).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]));
            // No plateau: the last increment is not negligible against the first.
            let first = vals[1] - vals[0];
            let last = vals[24] - vals[23];
            assert!(last >= 0.5 * first);
        }
    }

    #[test]
    fn vanishing_average_of_decaying_input() {
        // a ∉ L¹ and b → 0 imply e^{-A(t)} ∫ a e^{A} b → 0.
        let d = power4();
        let b = |u: f64| 1.0 / u.sqrt();
        let eps = 1e-2;
        let v = d.i_transform(b, 1e5).unwrap();
        assert!(v < eps, "{v}");
        let c = DampingSchedule::constant(1.0, 0.0).unwrap();
        let v = c.i_transform(|u| 1.0 / (1.0 + u), 500.0).unwrap();
        assert!(v < eps, "{v}");
    }

    #[test]
    fn scale_table_matches_closed_forms_for_custom_kind() {
        let grid = TimeGrid::new(1.0, 20.0, 0.01).unwrap();
        let exact = ScaleTable::new(&power4(), 1.0, &grid).unwrap();
        let numeric = ScaleTable::new(&custom_power(4.0, 1.0), 1.0, &grid).unwrap();
        for k in (0..grid.len()).step_by(97) {
            assert_relative_eq!(
                numeric.big_gamma[k],
                exact.big_gamma[k],
                max_relative = 1e-6
            );
            assert_relative_eq!(numeric.theta[k], exact.theta[k], max_relative = 1e-6);
            assert_relative_eq!(
                numeric.exp_neg_a[k],
                exact.exp_neg_a[k],
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn custom_hypothesis_violations() {
        let err = DampingSchedule::custom(|t| 4.0 / t, |t| t, 1.0).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)));
        let d = DampingSchedule::custom(|t| 0.5 / t, |t| 0.5 / t, 1.0).unwrap();
        assert!(!d.hypothesis().inverse_p_integrable);
        assert!(d.big_gamma(2.0).is_err());
    }

    #[test]
    fn integrability_examples() {
        let d = power4();
        let r = integrability_class(&d, &DiffusionSchedule::power(1.0, 3.0).unwrap());
        assert!(r.traj_ok && r.rate_ok && r.fast_ok);
        assert_eq!(
            (r.traj_threshold, r.rate_threshold, r.fast_threshold),
            (Some(1.5), Some(2.5), Some(2.5))
        );
        let r = integrability_class(&d, &DiffusionSchedule::power(1.0, 2.0).unwrap());
        assert!(r.traj_ok && !r.rate_ok);
        let err = r.require("rate_ok").unwrap_err().to_string();
        assert!(err.contains("rate_ok requires q > 5/2"), "{err}");
        assert!(err.contains("rate_ok false"), "{err}");
        let r = integrability_class(&d, &DiffusionSchedule::zero());
        assert!(r.traj_ok && r.rate_ok && r.fast_ok && !r.heuristic);
    }

    #[test]
    fn numeric_classification_agrees_with_analytic() {
        let analytic = power4();
        let numeric = custom_power(4.0, 1.0);
        for q in [1.0, 2.0, 3.0] {
            let s = DiffusionSchedule::power(0.5, q).unwrap();
            let a = integrability_class(&analytic, &s);
            let n = integrability_class(&numeric, &s);
            assert!(n.heuristic);
            assert_eq!(
                (a.traj_ok, a.rate_ok, a.fast_ok),
                (n.traj_ok, n.rate_ok, n.fast_ok),
                "q = {q}"
            );
        }
    }

    #[test]
    fn envelope_bounded_by_sigma_star_and_factor_lipschitz() {
        let t0 = 1.0;
        for s in [
            DiffusionSchedule::power(0.5, 1.5).unwrap(),
            DiffusionSchedule::exponential(0.1, 1.0).unwrap(),
            DiffusionSchedule::new(Envelope::Constant { c: 0.3 }, StateFactor::Saturating).unwrap(),
        ] {
            let star = s.sigma_star(t0);
            for t in log_points(t0, 1e4, 40) {
                assert!(s.sigma_inf(t) <= star);
            }
        }
        let f = StateFactor::Saturating;
        let mut seed = 1u64;
        let mut next = || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64 * 6.0 - 3.0
        };
        for _ in 0..500 {
            let x = Vector::from_fn(3, |_, _| next());
            let y = Vector::from_fn(3, |_, _| next());
            assert!((f.eval(&x) - f.eval(&y)).abs() <= f.l0() * (&x - &y).norm() + 1e-15);
            assert!(f.eval(&x) <= 1.0);
        }
    }

    #[test]
    fn tikhonov_ranges() {
        assert!(TikhonovSchedule::new(0.9).unwrap().in_sufficient_range(2.0));
        assert!(!TikhonovSchedule::new(0.5).unwrap().in_sufficient_range(2.0));
        assert!(TikhonovSchedule::new(0.0).is_err());
        assert!(TikhonovSchedule::new(1.5).is_err());
        let ts = TikhonovSchedule::new(1.0).unwrap();
        assert_relative_eq!(ts.epsilon_at(&power4(), 0.0, 5.0).unwrap(), 0.25);
    }

    #[test]
    fn time_changed_diffusion() {
        let d = power4();
        let s = DiffusionSchedule::power(0.5, 3.0).unwrap();
        let tc = TimeChanged {
            inner: &s,
            damping: &d,
            s0: 1.0,
        };
        let t = 4.0;
        let x = Vector::zeros(1);
        let theta = d.theta(1.0, t).unwrap();
        let expect = (t / 3.0f64).sqrt() * 0.5 * t.powf(-3.0);
        assert_relative_eq!(tc.coefficient(theta, &x), expect, max_relative = 1e-12);
    }
}
