//! Time scaling and averaging: second-order trajectories from first-order ones.
//!
//! A first-order trajectory `Z(s)` is rescaled to `Y(t) = Z(θ(t))` and then
//! averaged against the probability measure
//! `μ_t = e^{-A(t)} δ_{t0} + a(u) e^{A(u) - A(t)} du` on `[t0, t]`:
//!
//! ```text
//! X(t) = ∫ Y dμ_t + ξ(t),   ξ(t) = -e^{-A(t)} Γ(t0) V0,   V = (Y - X)/Γ.
//! ```
//!
//! With `β = Γ` the pair `(X, V)` is the inertial system; the equivalence is
//! checked pathwise by coupling the Brownian increments of both runs.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::analysis::fit_power_order;
use crate::error::{Error, Result};
use crate::problems::CompositeProblem;
use crate::schedules::{DampingSchedule, DiffusionSchedule, ScaleTable, TimeChanged};
use crate::sde::{
    simulate_inertial, simulate_scaled_first_order, BrownianPath, PathStatus, TimeGrid,
    TrajectoryFirstOrder, TrajectorySecondOrder,
};
use crate::Vector;

/// `Y(t_k) = Z(θ(t_k))`, interpolating `Z` piecewise linearly on its own grid.
/// `z` must cover the s-range `[θ(t_0), θ(t_end)]`.
pub fn time_rescale(
    z: &TrajectoryFirstOrder,
    scales: &ScaleTable,
    problem: &CompositeProblem,
) -> Result<TrajectoryFirstOrder> {
    let sg = z.grid;
    let s_lo = sg.t_start();
    let s_hi = sg.t(z.len() - 1);
    let theta_end = scales.theta[scales.len() - 1];
    let slack = 1e-12 * s_hi.abs().max(1.0);
    if scales.theta[0] < s_lo - slack || theta_end > s_hi + slack {
        return Err(Error::Domain(format!(
            "first-order trajectory covers s ∈ [{s_lo}, {s_hi}] but θ spans [{}, {theta_end}]",
            scales.theta[0]
        )));
    }
    let states: Vec<Vector> = scales
        .theta
        .iter()
        .map(|&s| {
            let pos = ((s - s_lo) / sg.step()).clamp(0.0, (z.len() - 1) as f64);
            let k = (pos.floor() as usize).min(z.len().saturating_sub(2));
            let w = pos - k as f64;
            if z.len() == 1 {
                z.state(0)
            } else {
                (1.0 - w) * z.state(k) + w * z.state(k + 1)
            }
        })
        .collect();
    TrajectoryFirstOrder::from_states(scales.grid, &states, problem)
}

/// Running state of the discrete averaging recursion
/// `X_{k+1} = X_k + h a_k (Y_k - X_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingState {
    pub x: Vector,
    /// Discrete correction `ξ_k = -Π_{j<k}(1 - h a_j) Γ(t0) V0`.
    pub xi: Vector,
    /// `ln Π_{j<k}(1 - h a_j)`, the discrete analogue of `-A(t_k)`.
    pub log_delta_mass: f64,
}

impl AveragingState {
    /// `X_0 = Y_0 - Γ(t0) V0`.
    pub fn new(y0: &Vector, big_gamma0: f64, v0: &Vector) -> Self {
        let xi = -big_gamma0 * v0;
        Self {
            x: y0 + &xi,
            xi,
            log_delta_mass: 0.0,
        }
    }

    /// Advances by one step with weight `h a_k` against the input `y_k`.
    pub fn step(&mut self, y: &Vector, weight: f64) {
        self.x.axpy(weight, &(y - &self.x), 1.0);
        self.xi *= 1.0 - weight;
        self.log_delta_mass += (1.0 - weight).ln();
    }
}

/// Averages a (rescaled) first-order trajectory into an inertial trajectory.
/// Velocities are recovered as `V_k = (Y_k - X_k)/Γ(t_k)`.
pub fn average_trajectory(
    y: &TrajectoryFirstOrder,
    scales: &ScaleTable,
    v0: &Vector,
    problem: &CompositeProblem,
) -> Result<TrajectorySecondOrder> {
    if y.grid != scales.grid {
        return Err(Error::config(
            "grid",
            "trajectory and scale table grids differ",
        ));
    }
    if let Some(k) = scales.big_gamma.iter().position(|&g| !(g > 0.0)) {
        return Err(Error::config(
            "damping",
            format!("Γ(t_{k}) = {} is not positive", scales.big_gamma[k]),
        ));
    }
    let h = y.grid.step();
    let mut out = TrajectorySecondOrder::with_capacity(y.grid, y.dim);
    let mut state = AveragingState::new(&y.state(0), scales.big_gamma[0], v0);
    for k in 0..y.len() {
        let yk = y.state(k);
        let vk = (&yk - &state.x) / scales.big_gamma[k];
        out.push(
            &state.x,
            &vk,
            problem.gap(&state.x),
            problem.drift(&yk).norm(),
        );
        if k + 1 < y.len() {
            state.step(&yk, h / scales.big_gamma[k]);
        }
    }
    if let PathStatus::Aborted { last_valid } = y.status {
        out.status = PathStatus::Aborted { last_valid };
    }
    Ok(out)
}

/// Continuous correction `ξ(t) = -e^{-A(t)} Γ(t0) V0`.
pub fn averaging_correction(d: &DampingSchedule, v0: &Vector, t: f64) -> Result<Vector> {
    Ok(-(d.exp_neg_a(t)? * d.big_gamma(d.t0())?) * v0)
}

/// Weights of the discrete measure at node `n`: the Dirac mass at `t0` and
/// the weights `h a_k Π_{k<j<n}(1 - h a_j)` of `Y_0 .. Y_{n-1}`.
pub fn discrete_mu_weights(scales: &ScaleTable, n: usize) -> (f64, Vec<f64>) {
    let h = scales.grid.step();
    let mut weights = vec![0.0; n];
    let mut tail = 1.0;
    for k in (0..n).rev() {
        let w = h / scales.big_gamma[k];
        weights[k] = w * tail;
        tail *= 1.0 - w;
    }
    (tail, weights)
}

/// Mass of `μ_t`: `e^{-A(t)} + ∫_{t0}^t a(u) e^{A(u) - A(t)} du` (equal to 1).
pub fn mu_mass(d: &DampingSchedule, t: f64) -> Result<f64> {
    Ok(d.exp_neg_a(t)? + d.i_transform(|_| 1.0, t)?)
}

/// Pathwise comparison of direct inertial simulation with the scaled and
/// averaged first-order system on coupled Brownian increments.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformReport {
    pub steps: Vec<f64>,
    /// Mean over paths of `sup_k |X_direct(t_k) - X_averaged(t_k)|`, per step.
    pub discrepancy: Vec<f64>,
    /// Log–log slope of discrepancy against step; `None` when all discrepancies vanish.
    pub order: Option<f64>,
    pub n_paths: usize,
}

impl TransformReport {
    /// CSV with `h,sup_discrepancy` rows and the fitted order as a trailing comment.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,sup_discrepancy\n");
        for (h, e) in self.steps.iter().zip(&self.discrepancy) {
            writeln!(out, "{h:e},{e:e}").unwrap();
        }
        match self.order {
            Some(o) => writeln!(out, "# order = {o}").unwrap(),
            None => writeln!(out, "# order = undefined (zero discrepancy)").unwrap(),
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Setup of a transform equivalence check.
#[derive(Debug, Clone)]
pub struct TransformCheck<'a> {
    pub problem: &'a CompositeProblem,
    pub sigma: &'a DiffusionSchedule,
    pub damping: &'a DampingSchedule,
    pub s0: f64,
    pub horizon: f64,
    pub x0: Vector,
    pub v0: Vector,
    /// Number of step halvings (the steps are `h0 / 2^i`, `i = 0..levels`).
    pub levels: usize,
    pub n_paths: usize,
}

fn sup_discrepancy(a: &TrajectorySecondOrder, b: &TrajectorySecondOrder) -> Result<f64> {
    if !(a.is_complete() && b.is_complete()) {
        return Err(Error::Numeric(
            "transform check: a trajectory aborted".into(),
        ));
    }
    Ok((0..a.len())
        .map(|k| (a.position(k) - b.position(k)).norm())
        .fold(0.0, f64::max))
}

impl TransformCheck<'_> {
    /// Runs both constructions for every step `h0 / 2^i`. Each path samples
    /// Brownian increments on the finest grid and coarsens them, so all step
    /// sizes see the same Brownian motion. The s-time diffusion of the scaled
    /// run is `√Γ(t) σ(t, ·)`, i.e. `ΔB_k = √Γ(t_k) ΔW_k`.
    pub fn run(&self, h0: f64, seed: u64) -> Result<TransformReport> {
        let levels = self.levels.max(2);
        let t0 = self.damping.t0();
        let coarse = TimeGrid::new(t0, self.horizon, h0)?;
        let finest_factor = 1usize << (levels - 1);
        let finest = coarse.refine(finest_factor);
        let dim = self.problem.dim();
        let grids: Vec<TimeGrid> = (0..levels)
            .map(|i| finest.coarsen(finest_factor >> i))
            .collect::<Result<_>>()?;
        let tables: Vec<ScaleTable> = grids
            .iter()
            .map(|g| ScaleTable::new(self.damping, self.s0, g))
            .collect::<Result<_>>()?;
        let s_diffusion = TimeChanged {
            inner: self.sigma,
            damping: self.damping,
            s0: self.s0,
        };
        let noiseless = crate::schedules::Diffusion::is_zero(self.sigma);
        let n_paths = if noiseless { 1 } else { self.n_paths.max(1) };
        let y0 = &self.x0 + self.damping.big_gamma(t0)? * &self.v0;

        let per_path: Vec<Vec<f64>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|stream| -> Result<Vec<f64>> {
                let fine = if noiseless {
                    BrownianPath::zero(dim, finest)
                } else {
                    BrownianPath::sample_stream(dim, finest, seed, stream)?
                };
                tables
                    .iter()
                    .map(|table| {
                        let factor = (table.grid.step() / finest.step()).round() as usize;
                        let path = fine.coarsen(factor)?;
                        let direct = simulate_inertial(
                            self.problem,
                            self.sigma,
                            table,
                            &path,
                            &self.x0,
                            &self.v0,
                        )?;
                        let y = simulate_scaled_first_order(
                            self.problem,
                            &s_diffusion,
                            table,
                            &path,
                            &y0,
                            None,
                        )?;
                        let averaged = average_trajectory(&y, table, &self.v0, self.problem)?;
                        sup_discrepancy(&direct, &averaged)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;

        let steps: Vec<f64> = grids.iter().map(TimeGrid::step).collect();
        let discrepancy: Vec<f64> = (0..levels)
            .map(|i| per_path.iter().map(|p| p[i]).sum::<f64>() / n_paths as f64)
            .collect();
        let order = if discrepancy.iter().all(|&e| e > 0.0) {
            Some(fit_power_order(&steps, &discrepancy)?)
        } else {
            None
        };
        Ok(TransformReport {
            steps,
            discrepancy,
            order,
            n_paths,
        })
    }
}

/// Runs the equivalence check over `h ∈ {h0, h0/2, h0/4, h0/8}`.
#[allow(clippy::too_many_arguments)]
pub fn transform_equivalence_check(
    problem: &CompositeProblem,
    sigma: &DiffusionSchedule,
    d: &DampingSchedule,
    s0: f64,
    h0: f64,
    horizon: f64,
    x0: &Vector,
    v0: &Vector,
    n_paths: usize,
    seed: u64,
) -> Result<TransformReport> {
    TransformCheck {
        problem,
        sigma,
        damping: d,
        s0,
        horizon,
        x0: x0.clone(),
        v0: v0.clone(),
        levels: 4,
        n_paths,
    }
    .run(h0, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::half_squared_norm;
    use crate::quadrature;
    use crate::sde::simulate_first_order;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn power4_table(h: f64, horizon: f64, s0: f64) -> (DampingSchedule, ScaleTable) {
        let d = DampingSchedule::power(4.0, 1.0).unwrap();
        let g = TimeGrid::new(1.0, horizon, h).unwrap();
        let table = ScaleTable::new(&d, s0, &g).unwrap();
        (d, table)
    }

    #[test]
    fn rescale_identity_trajectory() {
        // Z(s) = s on an s-grid; Y(5) = θ(5) = 4 with s0 = 0.
        let p = half_squared_norm(1);
        let sg = TimeGrid::new(0.0, 10.0, 0.5).unwrap();
        let states: Vec<Vector> = sg.nodes().map(|s| v(&[s])).collect();
        let z = TrajectoryFirstOrder::from_states(sg, &states, &p).unwrap();
        let (_, table) = power4_table(0.5, 5.0, 0.0);
        let y = time_rescale(&z, &table, &p).unwrap();
        assert_relative_eq!(y.last_state()[0], 4.0, max_relative = 1e-14);
    }

    #[test]
    fn rescale_constant_and_out_of_range() {
        let p = half_squared_norm(2);
        let sg = TimeGrid::new(0.0, 3.0, 0.1).unwrap();
        let c = v(&[1.5, -0.5]);
        let states = vec![c.clone(); sg.len()];
        let z = TrajectoryFirstOrder::from_states(sg, &states, &p).unwrap();
        let (_, table) = power4_table(0.1, 3.0, 0.0);
        let y = time_rescale(&z, &table, &p).unwrap();
        assert!(y.states().all(|s| (s - &c).norm() < 1e-15));
        let (_, long) = power4_table(0.1, 5.0, 0.0);
        assert!(matches!(time_rescale(&z, &long, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn rescaled_gradient_flow_matches_direct_scaled_run() {
        let p = half_squared_norm(1);
        let h = 0.01;
        let (_, table) = power4_table(h, 4.0, 0.0);
        let s_end = table.theta[table.len() - 1];
        let sg = TimeGrid::new(0.0, s_end + 0.01, 1e-4).unwrap();
        let zero = DiffusionSchedule::zero();
        let z =
            simulate_first_order(&p, &zero, &BrownianPath::zero(1, sg), &v(&[1.0]), None).unwrap();
        let y = time_rescale(&z, &table, &p).unwrap();
        let direct = simulate_scaled_first_order(
            &p,
            &zero,
            &table,
            &BrownianPath::zero(1, table.grid),
            &v(&[1.0]),
            None,
        )
        .unwrap();
        for k in 0..y.len() {
            assert!((y.state(k) - direct.state(k)).norm() <= 2.0 * h);
        }
    }

    #[test]
    fn averaging_constant_input() {
        let p = half_squared_norm(2);
        let (d, table) = power4_table(0.01, 10.0, 1.0);
        let y0 = v(&[0.3, -0.7]);
        let states = vec![y0.clone(); table.len()];
        let y = TrajectoryFirstOrder::from_states(table.grid, &states, &p).unwrap();
        let x = average_trajectory(&y, &table, &Vector::zeros(2), &p).unwrap();
        for k in 0..x.len() {
            assert!((x.position(k) - &y0).norm() < 1e-15);
            assert!(x.velocity(k).norm() < 1e-13);
        }
        // Nonzero initial velocity: X(t) = y0 - e^{-A(t)} Γ(t0) V0 up to O(h).
        let v0 = v(&[1.0, 2.0]);
        let x = average_trajectory(&y, &table, &v0, &p).unwrap();
        for k in (0..x.len()).step_by(100) {
            let expect = &y0 + averaging_correction(&d, &v0, table.t[k]).unwrap();
            assert!((x.position(k) - expect).norm() < 0.05, "k = {k}");
        }
        let last = x.len() - 1;
        assert!((x.position(last) - &y0).norm() < 2e-3);
    }

    #[test]
    fn recursion_matches_quadrature_form() {
        // Oracle: X(t) = ∫ Y dμ_t + ξ(t) by adaptive quadrature with Y
        // interpolated linearly; the recursion agrees to O(h).
        let p = half_squared_norm(1);
        let d = DampingSchedule::power(4.0, 1.0).unwrap();
        let yfun = |t: f64| (0.7 * t).sin() + 0.3 * (t / 3.0).cos();
        let mut errs = Vec::new();
        for &h in &[0.02, 0.01] {
            let g = TimeGrid::new(1.0, 8.0, h).unwrap();
            let table = ScaleTable::new(&d, 1.0, &g).unwrap();
            let states: Vec<Vector> = g.nodes().map(|t| v(&[yfun(t)])).collect();
            let y = TrajectoryFirstOrder::from_states(g, &states, &p).unwrap();
            let v0 = v(&[0.5]);
            let x = average_trajectory(&y, &table, &v0, &p).unwrap();
            let mut worst: f64 = 0.0;
            for k in (0..g.len()).step_by(25) {
                let t = g.t(k);
                let integral =
                    quadrature::quad(|u| yfun(u) * d.averaging_density(u, t).unwrap(), 1.0, t)
                        .unwrap();
                let oracle = d.exp_neg_a(t).unwrap() * yfun(1.0)
                    + integral
                    + averaging_correction(&d, &v0, t).unwrap()[0];
                worst = worst.max((x.position(k)[0] - oracle).abs());
            }
            errs.push(worst);
        }
        assert!(errs[0] < 0.05, "{errs:?}");
        assert!(errs[1] < 0.6 * errs[0], "{errs:?}");
    }

    #[test]
    fn discrete_mu_mass_is_one() {
        let (d, table) = power4_table(0.01, 50.0, 1.0);
        for n in [1, 10, 100, 1000, table.len() - 1] {
            let (delta, w) = discrete_mu_weights(&table, n);
            let mass = delta + w.iter().sum::<f64>();
            assert!((mass - 1.0).abs() < 1e-6, "{mass}");
        }
        for t in [1.0, 2.0, 10.0, 50.0] {
            assert!((mu_mass(&d, t).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn velocity_recovery_and_xi_decay() {
        let p = half_squared_norm(2);
        let (d, table) = power4_table(0.01, 30.0, 1.0);
        let s = DiffusionSchedule::power(0.5, 3.0).unwrap();
        let path = BrownianPath::sample(2, table.grid, 4).unwrap();
        let y = simulate_scaled_first_order(&p, &s, &table, &path, &v(&[1.0, 1.0]), None).unwrap();
        let v0 = v(&[0.2, -0.4]);
        let x = average_trajectory(&y, &table, &v0, &p).unwrap();
        for k in 0..x.len() {
            let rebuilt = table.big_gamma[k] * x.velocity(k) + x.position(k);
            let yk = y.state(k);
            assert!((rebuilt - &yk).norm() <= 1e-14 * (1.0 + yk.norm()));
        }
        let mut st = AveragingState::new(&y.state(0), table.big_gamma[0], &v0);
        let xi0 = st.xi.norm();
        for k in 0..table.len() - 1 {
            st.step(&y.state(k), table.grid.step() / table.big_gamma[k]);
        }
        let bound = d.exp_neg_a(table.t[table.len() - 1]).unwrap();
        assert!(st.xi.norm() / xi0 <= bound * 1.01);
        assert_relative_eq!(st.x, x.position(x.len() - 1), max_relative = 1e-15);
    }

    #[test]
    fn equivalence_exact_at_equilibrium() {
        let p = half_squared_norm(2);
        let d = DampingSchedule::power(4.0, 1.0).unwrap();
        let r = transform_equivalence_check(
            &p,
            &DiffusionSchedule::zero(),
            &d,
            1.0,
            0.02,
            5.0,
            &Vector::zeros(2),
            &Vector::zeros(2),
            4,
            1,
        )
        .unwrap();
        assert!(r.discrepancy.iter().all(|&e| e == 0.0));
        assert_eq!(r.order, None);
    }

    #[test]
    fn equivalence_order_without_noise() {
        let p = half_squared_norm(2);
        let d = DampingSchedule::power(4.0, 1.0).unwrap();
        let r = transform_equivalence_check(
            &p,
            &DiffusionSchedule::zero(),
            &d,
            1.0,
            0.02,
            10.0,
            &v(&[1.0, -2.0]),
            &v(&[0.5, 0.0]),
            1,
            1,
        )
        .unwrap();
        assert!(r.order.unwrap() >= 0.9, "{r:?}");
        assert!(r.to_csv().starts_with("h,sup_discrepancy\n"));
    }
}
