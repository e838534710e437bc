//! Time grids, seeded Brownian paths and Euler–Maruyama integrators.
//!
//! Three systems are integrated on a uniform grid `t_k = t0 + k h`:
//!
//! * first order: `Z' = -∇F_λ(Z) - ε Z + σ Ẇ`,
//! * scaled first order: `Y' = -Γ (∇F_λ(Y) + ε Y) + √Γ σ1(θ, Y) Ẇ`,
//! * inertial: `X' = V`, `V' = -γ V - (∇F_λ + ε)(X + β V) + σ Ẇ`,
//!
//! where `∇F_λ = ∇f + ∇g_λ` is the smoothed drift of the problem. All
//! coefficients are evaluated at the left endpoint of each step.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::problems::CompositeProblem;
use crate::schedules::{Diffusion, ScaleTable, TikhonovSchedule};
use crate::Vector;

/// Uniform grid `t_k = t_start + k h`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    step: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// Grid on `[t_start, t_end]` with `⌊(t_end - t_start)/h⌋ + 1` nodes.
    pub fn new(t_start: f64, t_end: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::config(
                "h",
                format!("step must be positive, got {h}"),
            ));
        }
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::config(
                "horizon",
                format!("need t_start < t_end, got [{t_start}, {t_end}]"),
            ));
        }
        // Guard against (t_end - t_start)/h landing just below an integer.
        let n_steps = ((t_end - t_start) / h * (1.0 + 1e-12)).floor() as usize;
        if n_steps == 0 {
            return Err(Error::config("h", "step exceeds the horizon"));
        }
        Ok(Self {
            t_start,
            step: h,
            n_steps,
        })
    }

    pub fn with_steps(t_start: f64, h: f64, n_steps: usize) -> Result<Self> {
        if !(h > 0.0) || n_steps == 0 {
            return Err(Error::config(
                "h",
                "need a positive step and at least one step",
            ));
        }
        Ok(Self {
            t_start,
            step: h,
            n_steps,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.n_steps)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.step
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| self.t(k))
    }

    /// The grid with step `h / factor` over the same span.
    pub fn refine(&self, factor: usize) -> Self {
        Self {
            t_start: self.t_start,
            step: self.step / factor as f64,
            n_steps: self.n_steps * factor,
        }
    }

    /// The grid with step `h * factor`; `factor` must divide the step count.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(Error::config(
                "factor",
                format!(
                    "{factor} does not divide the {} steps of the grid",
                    self.n_steps
                ),
            ));
        }
        Ok(Self {
            t_start: self.t_start,
            step: self.step * factor as f64,
            n_steps: self.n_steps / factor,
        })
    }
}

/// Increments `ΔW_k ~ N(0, h I)` of a `dim`-dimensional Brownian motion.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    dim: usize,
    seed: u64,
    stream: u64,
    increments: Vec<f64>,
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl BrownianPath {
    /// Samples a path; deterministic in `(dim, grid, seed)`.
    pub fn sample(dim: usize, grid: TimeGrid, seed: u64) -> Result<Self> {
        Self::sample_stream(dim, grid, seed, 0)
    }

    /// Samples the `stream`-th independent path of a seeded family. Monte
    /// Carlo path `i` uses stream `i`.
    pub fn sample_stream(dim: usize, grid: TimeGrid, seed: u64, stream: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim", "Brownian dimension must be positive"));
        }
        let mut rng = path_rng(seed, stream);
        let sd = grid.step().sqrt();
        let increments = (0..grid.n_steps() * dim)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                sd * g
            })
            .collect();
        Ok(Self {
            grid,
            dim,
            seed,
            stream,
            increments,
        })
    }

    /// The path with all increments zero (`σ`-independent runs).
    pub fn zero(dim: usize, grid: TimeGrid) -> Self {
        Self {
            grid,
            dim,
            seed: 0,
            stream: 0,
            increments: vec![0.0; grid.n_steps() * dim],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// `ΔW_k = W(t_{k+1}) - W(t_k)`.
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    /// `W(t_k)` with `W(t_0) = 0`.
    pub fn values(&self) -> Vec<Vector> {
        let mut w = Vector::zeros(self.dim);
        let mut out = Vec::with_capacity(self.grid.len());
        out.push(w.clone());
        for k in 0..self.grid.n_steps() {
            for (wi, dw) in w.iter_mut().zip(self.increment(k)) {
                *wi += dw;
            }
            out.push(w.clone());
        }
        out
    }

    /// Merges `factor` consecutive increments; the coarse increment is the
    /// exact floating-point sum of the fine ones, in order.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        let d = self.dim;
        let mut increments = vec![0.0; grid.n_steps() * d];
        for (k, chunk) in increments.chunks_mut(d).enumerate() {
            for j in 0..factor {
                for (c, dw) in chunk.iter_mut().zip(self.increment(k * factor + j)) {
                    *c += dw;
                }
            }
        }
        Ok(Self {
            grid,
            dim: d,
            seed: self.seed,
            stream: self.stream,
            increments,
        })
    }

    /// Subdivides every step into `factor` sub-steps by Brownian bridge
    /// sampling; `salt` selects the refinement randomness. Sub-increments sum
    /// to the coarse increment up to rounding.
    pub fn refine(&self, factor: usize, salt: u64) -> Result<Self> {
        if factor == 0 {
            return Err(Error::config(
                "factor",
                "refinement factor must be positive",
            ));
        }
        let grid = self.grid.refine(factor);
        let d = self.dim;
        let mut rng = path_rng(
            self.seed ^ salt.rotate_left(17) ^ 0x9e37_79b9_7f4a_7c15,
            self.stream,
        );
        let sd = grid.step().sqrt();
        let m = factor as f64;
        let mut increments = Vec::with_capacity(grid.n_steps() * d);
        let mut z = vec![0.0; factor * d];
        for k in 0..self.grid.n_steps() {
            for zi in z.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *zi = sd * g;
            }
            let dw = self.increment(k);
            for i in 0..d {
                let sum: f64 = (0..factor).map(|j| z[j * d + i]).sum();
                let shift = (sum - dw[i]) / m;
                for j in 0..factor {
                    z[j * d + i] -= shift;
                }
            }
            increments.extend_from_slice(&z);
        }
        Ok(Self {
            grid,
            dim: d,
            seed: self.seed,
            stream: self.stream,
            increments,
        })
    }
}

/// Whether a trajectory reached the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStatus {
    Completed,
    /// A non-finite state appeared after node `last_valid`; storage is truncated there.
    Aborted {
        last_valid: usize,
    },
}

/// States `Z_k` of a first-order run with the gap `F(Z_k) - min F` and the
/// drift norm `|∇F_λ(Z_k)|` at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFirstOrder {
    pub grid: TimeGrid,
    pub dim: usize,
    states: Vec<f64>,
    pub gap: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub status: PathStatus,
}

impl TrajectoryFirstOrder {
    /// Builds a trajectory from node states; diagnostics are evaluated on `problem`.
    pub fn from_states(
        grid: TimeGrid,
        states: &[Vector],
        problem: &CompositeProblem,
    ) -> Result<Self> {
        if states.len() != grid.len() {
            return Err(Error::config(
                "states",
                format!("{} states for a grid of {} nodes", states.len(), grid.len()),
            ));
        }
        let dim = problem.dim();
        let mut t = Self {
            grid,
            dim,
            states: Vec::with_capacity(states.len() * dim),
            gap: Vec::with_capacity(states.len()),
            grad_norm: Vec::with_capacity(states.len()),
            status: PathStatus::Completed,
        };
        for s in states {
            t.push(s, problem);
        }
        Ok(t)
    }

    fn with_capacity(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            states: Vec::with_capacity(grid.len() * dim),
            gap: Vec::with_capacity(grid.len()),
            grad_norm: Vec::with_capacity(grid.len()),
            status: PathStatus::Completed,
        }
    }

    fn push(&mut self, z: &Vector, problem: &CompositeProblem) {
        self.states.extend(z.iter());
        self.gap.push(problem.gap(z));
        self.grad_norm.push(problem.drift(z).norm());
    }

    /// Number of stored nodes (all of them unless aborted).
    pub fn len(&self) -> usize {
        self.gap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gap.is_empty()
    }

    pub fn t(&self, k: usize) -> f64 {
        self.grid.t(k)
    }

    pub fn state(&self, k: usize) -> Vector {
        Vector::from_column_slice(&self.states[k * self.dim..(k + 1) * self.dim])
    }

    pub fn states(&self) -> impl Iterator<Item = Vector> + '_ {
        (0..self.len()).map(|k| self.state(k))
    }

    pub fn last_state(&self) -> Vector {
        self.state(self.len() - 1)
    }

    pub fn is_complete(&self) -> bool {
        self.status == PathStatus::Completed
    }

    /// CSV rows `t, z1..zd (or |z| when d > 8), f_gap, grad_norm`, keeping every `stride`-th node.
    pub fn to_csv(&self, stride: usize) -> String {
        trajectory_csv(
            stride,
            self.len(),
            &self.grid,
            &[("z", self.dim, &self.states)],
            &self.gap,
            &self.grad_norm,
        )
    }

    pub fn write_csv(&self, path: &Path, stride: usize) -> Result<()> {
        std::fs::write(path, self.to_csv(stride))?;
        Ok(())
    }
}

/// Positions and velocities of an inertial run with the gap at `X_k` and the
/// drift norm at the look-ahead point `X_k + β_k V_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySecondOrder {
    pub grid: TimeGrid,
    pub dim: usize,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    pub gap: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub status: PathStatus,
    /// Steps with `γ_k h >= 1`.
    pub overshoot_steps: usize,
}

impl TrajectorySecondOrder {
    pub(crate) fn with_capacity(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            positions: Vec::with_capacity(grid.len() * dim),
            velocities: Vec::with_capacity(grid.len() * dim),
            gap: Vec::with_capacity(grid.len()),
            grad_norm: Vec::with_capacity(grid.len()),
            status: PathStatus::Completed,
            overshoot_steps: 0,
        }
    }

    pub(crate) fn push(&mut self, x: &Vector, v: &Vector, gap: f64, grad_norm: f64) {
        self.positions.extend(x.iter());
        self.velocities.extend(v.iter());
        self.gap.push(gap);
        self.grad_norm.push(grad_norm);
    }

    pub fn len(&self) -> usize {
        self.gap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gap.is_empty()
    }

    pub fn t(&self, k: usize) -> f64 {
        self.grid.t(k)
    }

    pub fn position(&self, k: usize) -> Vector {
        Vector::from_column_slice(&self.positions[k * self.dim..(k + 1) * self.dim])
    }

    pub fn velocity(&self, k: usize) -> Vector {
        Vector::from_column_slice(&self.velocities[k * self.dim..(k + 1) * self.dim])
    }

    pub fn positions(&self) -> impl Iterator<Item = Vector> + '_ {
        (0..self.len()).map(|k| self.position(k))
    }

    pub fn is_complete(&self) -> bool {
        self.status == PathStatus::Completed
    }

    /// CSV rows `t, x.., v.., f_gap, grad_norm`; norms replace components when d > 8.
    pub fn to_csv(&self, stride: usize) -> String {
        trajectory_csv(
            stride,
            self.len(),
            &self.grid,
            &[
                ("x", self.dim, &self.positions),
                ("v", self.dim, &self.velocities),
            ],
            &self.gap,
            &self.grad_norm,
        )
    }

    pub fn write_csv(&self, path: &Path, stride: usize) -> Result<()> {
        std::fs::write(path, self.to_csv(stride))?;
        Ok(())
    }
}

fn trajectory_csv(
    stride: usize,
    len: usize,
    grid: &TimeGrid,
    blocks: &[(&str, usize, &Vec<f64>)],
    gap: &[f64],
    grad_norm: &[f64],
) -> String {
    let stride = stride.max(1);
    let mut out = String::from("t");
    for (name, dim, _) in blocks {
        if *dim > 8 {
            write!(out, ",|{name}|").unwrap();
        } else {
            for i in 1..=*dim {
                write!(out, ",{name}{i}").unwrap();
            }
        }
    }
    out.push_str(",f_gap,grad_norm\n");
    let mut k = 0;
    while k < len {
        write!(out, "{:e}", grid.t(k)).unwrap();
        for (_, dim, data) in blocks {
            let row = &data[k * dim..(k + 1) * dim];
            if *dim > 8 {
                write!(out, ",{:e}", row.iter().map(|v| v * v).sum::<f64>().sqrt()).unwrap();
            } else {
                for v in row {
                    write!(out, ",{v:e}").unwrap();
                }
            }
        }
        writeln!(out, ",{:e},{:e}", gap[k], grad_norm[k]).unwrap();
        // Always include the final node.
        k = if k + 1 < len && k + stride >= len {
            len - 1
        } else {
            k + stride
        };
    }
    out
}

fn check_dims(problem: &CompositeProblem, path: &BrownianPath, x0: &Vector) -> Result<()> {
    if x0.len() != problem.dim() {
        return Err(Error::config(
            "x0",
            format!(
                "initial state has length {}, problem dimension is {}",
                x0.len(),
                problem.dim()
            ),
        ));
    }
    if path.dim() != problem.dim() {
        return Err(Error::config(
            "path",
            format!(
                "Brownian dimension {} differs from problem dimension {}",
                path.dim(),
                problem.dim()
            ),
        ));
    }
    Ok(())
}

fn add_noise(state: &mut Vector, coeff: f64, dw: &[f64]) {
    if coeff != 0.0 {
        for (s, w) in state.iter_mut().zip(dw) {
            *s += coeff * w;
        }
    }
}

/// Euler–Maruyama for `dZ = -[∇F_λ(Z) + ε(t) Z] dt + σ(t, Z) dW`.
///
/// The first-order system already runs in the fast time variable, so the
/// Tikhonov parameter is `ε(t) = t^{-r}`.
pub fn simulate_first_order(
    problem: &CompositeProblem,
    sigma: &dyn Diffusion,
    path: &BrownianPath,
    z0: &Vector,
    tikhonov: Option<&TikhonovSchedule>,
) -> Result<TrajectoryFirstOrder> {
    check_dims(problem, path, z0)?;
    let grid = *path.grid();
    let h = grid.step();
    let mut traj = TrajectoryFirstOrder::with_capacity(grid, problem.dim());
    let mut z = z0.clone();
    traj.push(&z, problem);
    for k in 0..grid.n_steps() {
        let t = grid.t(k);
        let mut drift = problem.drift(&z);
        if let Some(ts) = tikhonov {
            drift.axpy(ts.epsilon(t), &z, 1.0);
        }
        let coeff = sigma.coefficient(t, &z);
        z.axpy(-h, &drift, 1.0);
        add_noise(&mut z, coeff, path.increment(k));
        if !z.iter().all(|v| v.is_finite()) {
            traj.status = PathStatus::Aborted { last_valid: k };
            return Ok(traj);
        }
        traj.push(&z, problem);
    }
    Ok(traj)
}

/// Proximal Euler–Maruyama variant for composite problems: an explicit step
/// on `f`, then `prox_{h g}`. An alternative discretization for
/// cross-checking the smoothed drift.
pub fn simulate_first_order_prox(
    problem: &CompositeProblem,
    sigma: &dyn Diffusion,
    path: &BrownianPath,
    z0: &Vector,
) -> Result<TrajectoryFirstOrder> {
    check_dims(problem, path, z0)?;
    let grid = *path.grid();
    let h = grid.step();
    let mut traj = TrajectoryFirstOrder::with_capacity(grid, problem.dim());
    let f = problem.smooth_part();
    let mut z = z0.clone();
    traj.push(&z, problem);
    for k in 0..grid.n_steps() {
        let t = grid.t(k);
        let coeff = sigma.coefficient(t, &z);
        let grad = f.gradient(&z);
        z.axpy(-h, &grad, 1.0);
        add_noise(&mut z, coeff, path.increment(k));
        if let Some(g) = problem.nonsmooth_part() {
            z = g.prox(h, &z);
        }
        if !z.iter().all(|v| v.is_finite()) {
            traj.status = PathStatus::Aborted { last_valid: k };
            return Ok(traj);
        }
        traj.push(&z, problem);
    }
    Ok(traj)
}

fn check_table(scales: &ScaleTable, grid: &TimeGrid) -> Result<()> {
    if scales.grid != *grid {
        return Err(Error::config(
            "grid",
            "scale table was built on a different grid than the Brownian path",
        ));
    }
    Ok(())
}

/// Euler–Maruyama for the time-scaled first-order system
/// `dY = -Γ(t)[∇F_λ(Y) + ε Y] dt + √Γ(t) σ1(θ(t), Y) dW`, where `σ1` is an
/// s-time diffusion and `ε = θ(t)^{-r}` when Tikhonov regularization is on.
pub fn simulate_scaled_first_order(
    problem: &CompositeProblem,
    sigma: &dyn Diffusion,
    scales: &ScaleTable,
    path: &BrownianPath,
    y0: &Vector,
    tikhonov: Option<&TikhonovSchedule>,
) -> Result<TrajectoryFirstOrder> {
    check_dims(problem, path, y0)?;
    let grid = *path.grid();
    check_table(scales, &grid)?;
    let h = grid.step();
    let mut traj = TrajectoryFirstOrder::with_capacity(grid, problem.dim());
    let mut y = y0.clone();
    traj.push(&y, problem);
    for k in 0..grid.n_steps() {
        let big_gamma = scales.big_gamma[k];
        let theta = scales.theta[k];
        let mut drift = problem.drift(&y);
        if let Some(ts) = tikhonov {
            drift.axpy(ts.epsilon(theta), &y, 1.0);
        }
        let coeff = big_gamma.sqrt() * sigma.coefficient(theta, &y);
        y.axpy(-h * big_gamma, &drift, 1.0);
        add_noise(&mut y, coeff, path.increment(k));
        if !y.iter().all(|v| v.is_finite()) {
            traj.status = PathStatus::Aborted { last_valid: k };
            return Ok(traj);
        }
        traj.push(&y, problem);
    }
    Ok(traj)
}

/// Geometric damping `β` of the inertial system.
#[derive(Clone)]
pub enum BetaMode {
    /// `β = Γ`, the choice under which the system is the averaged, time-scaled
    /// first-order system.
    GammaLinked,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for BetaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BetaMode::GammaLinked => f.write_str("GammaLinked"),
            BetaMode::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// The inertial system with implicit Hessian damping, discretized as
///
/// ```text
/// X_{k+1} = X_k + h V_k
/// V_{k+1} = (1 - γ_k h) V_k - h [∇F_λ + ε_k](X_k + β_k V_k) + g σ(t_k, X_k + β_k V_k) ΔW_k
/// ```
///
/// with noise gain `g` (1 by default; `√h` for the product-space form used in
/// consistency studies).
#[derive(Clone)]
pub struct InertialSystem<'a> {
    pub problem: &'a CompositeProblem,
    pub sigma: &'a dyn Diffusion,
    pub scales: &'a ScaleTable,
    pub beta: BetaMode,
    pub tikhonov: Option<TikhonovSchedule>,
    pub noise_gain: f64,
}

impl<'a> InertialSystem<'a> {
    pub fn new(
        problem: &'a CompositeProblem,
        sigma: &'a dyn Diffusion,
        scales: &'a ScaleTable,
    ) -> Self {
        Self {
            problem,
            sigma,
            scales,
            beta: BetaMode::GammaLinked,
            tikhonov: None,
            noise_gain: 1.0,
        }
    }

    pub fn with_beta(mut self, beta: BetaMode) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_tikhonov(mut self, tikhonov: Option<TikhonovSchedule>) -> Self {
        self.tikhonov = tikhonov;
        self
    }

    pub fn with_noise_gain(mut self, gain: f64) -> Self {
        self.noise_gain = gain;
        self
    }

    fn beta_at(&self, k: usize) -> f64 {
        match &self.beta {
            BetaMode::GammaLinked => self.scales.big_gamma[k],
            BetaMode::Custom(b) => b(self.scales.t[k]),
        }
    }

    /// Integrates from `(x0, v0)` along `path`. The scale table must be built on the path's grid.
    pub fn simulate(
        &self,
        path: &BrownianPath,
        x0: &Vector,
        v0: &Vector,
    ) -> Result<TrajectorySecondOrder> {
        let problem = self.problem;
        check_dims(problem, path, x0)?;
        if v0.len() != x0.len() {
            return Err(Error::config(
                "v0",
                "initial velocity length differs from the position",
            ));
        }
        let grid = *path.grid();
        check_table(self.scales, &grid)?;
        let h = grid.step();
        let mut traj = TrajectorySecondOrder::with_capacity(grid, problem.dim());
        let mut x = x0.clone();
        let mut v = v0.clone();
        let look0 = &x + self.beta_at(0) * &v;
        traj.push(&x, &v, problem.gap(&x), problem.drift(&look0).norm());
        let mut warned = false;
        for k in 0..grid.n_steps() {
            let gamma = self.scales.gamma[k];
            if gamma * h >= 1.0 {
                traj.overshoot_steps += 1;
                if !warned {
                    log::warn!(
                        "damping overshoot: γ h = {} >= 1 at t = {}",
                        gamma * h,
                        grid.t(k)
                    );
                    warned = true;
                }
            }
            let beta = self.beta_at(k);
            let look = &x + beta * &v;
            let mut drift = problem.drift(&look);
            if let Some(ts) = &self.tikhonov {
                drift.axpy(ts.epsilon(self.scales.theta[k]), &look, 1.0);
            }
            let coeff = self.noise_gain * self.sigma.coefficient(grid.t(k), &look);
            x.axpy(h, &v, 1.0);
            v *= 1.0 - gamma * h;
            v.axpy(-h, &drift, 1.0);
            add_noise(&mut v, coeff, path.increment(k));
            if !(x.iter().all(|c| c.is_finite()) && v.iter().all(|c| c.is_finite())) {
                traj.status = PathStatus::Aborted { last_valid: k };
                return Ok(traj);
            }
            // Diagnostics use the look-ahead point of the next step.
            let beta_next = self.beta_at(k + 1);
            let look_next = &x + beta_next * &v;
            traj.push(&x, &v, problem.gap(&x), problem.drift(&look_next).norm());
        }
        Ok(traj)
    }
}

/// Convenience wrapper: `β = Γ`, no Tikhonov term, unit noise gain.
pub fn simulate_inertial(
    problem: &CompositeProblem,
    sigma: &dyn Diffusion,
    scales: &ScaleTable,
    path: &BrownianPath,
    x0: &Vector,
    v0: &Vector,
) -> Result<TrajectorySecondOrder> {
    InertialSystem::new(problem, sigma, scales).simulate(path, x0, v0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{half_squared_norm, ProblemSpec};
    use crate::schedules::{DampingSchedule, DiffusionSchedule};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn grid_node_count() {
        let g = TimeGrid::new(1.0, 1000.0, 1e-2).unwrap();
        assert_eq!(g.len(), 99_901);
        assert_relative_eq!(g.t_end(), 1000.0, max_relative = 1e-12);
        let g = TimeGrid::new(0.0, 1.0, 0.3).unwrap();
        assert_eq!(g.len(), 4);
        assert!(TimeGrid::new(0.0, 1.0, 0.0).is_err());
        assert!(TimeGrid::new(0.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn same_seed_same_path() {
        let g = TimeGrid::new(0.0, 1.0, 0.01).unwrap();
        let a = BrownianPath::sample(3, g, 42).unwrap();
        let b = BrownianPath::sample(3, g, 42).unwrap();
        assert_eq!(a, b);
        let c = BrownianPath::sample(3, g, 43).unwrap();
        assert_ne!(a, c);
        let d = BrownianPath::sample_stream(3, g, 42, 1).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn coarsening_sums_increments_exactly() {
        let g = TimeGrid::new(0.0, 1.0, 0.01).unwrap();
        let fine = BrownianPath::sample(2, g, 7).unwrap();
        let coarse = fine.coarsen(2).unwrap();
        assert_eq!(coarse.grid().n_steps(), 50);
        for k in 0..50 {
            for i in 0..2 {
                assert_eq!(
                    coarse.increment(k)[i],
                    fine.increment(2 * k)[i] + fine.increment(2 * k + 1)[i]
                );
            }
        }
        assert!(fine.coarsen(3).is_err());
    }

    #[test]
    fn refinement_preserves_coarse_increments() {
        let g = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        let coarse = BrownianPath::sample(2, g, 1).unwrap();
        let fine = coarse.refine(8, 0).unwrap();
        let back = fine.coarsen(8).unwrap();
        for k in 0..10 {
            for i in 0..2 {
                assert!((back.increment(k)[i] - coarse.increment(k)[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn refined_increments_have_fine_variance() {
        let g = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        let mut sum2 = 0.0;
        let mut n = 0.0;
        for stream in 0..400 {
            let fine = BrownianPath::sample_stream(1, g, 5, stream)
                .unwrap()
                .refine(4, 3)
                .unwrap();
            for k in 0..fine.grid().n_steps() {
                sum2 += fine.increment(k)[0].powi(2);
                n += 1.0;
            }
        }
        assert!((sum2 / n / 0.025 - 1.0).abs() < 0.05);
    }

    #[test]
    fn increment_variance_and_mean() {
        let h = 0.01;
        let g = TimeGrid::with_steps(0.0, h, 4).unwrap();
        let n = 10_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for stream in 0..n {
            let p = BrownianPath::sample_stream(1, g, 99, stream).unwrap();
            let w = p.increment(2)[0];
            sum += w;
            sum2 += w * w;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!((var / h - 1.0).abs() < 0.05, "{var}");
        assert!(mean.abs() < 4.0 * (h / n as f64).sqrt());
    }

    #[test]
    fn first_order_linear_recursion() {
        let p = half_squared_norm(1);
        let g = TimeGrid::with_steps(1.0, 0.1, 50).unwrap();
        let path = BrownianPath::zero(1, g);
        let traj =
            simulate_first_order(&p, &DiffusionSchedule::zero(), &path, &v(&[1.0]), None).unwrap();
        for k in 0..=50 {
            assert_relative_eq!(
                traj.state(k)[0],
                0.9f64.powi(k as i32),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn first_order_stays_at_minimizer() {
        let p = ProblemSpec::Quadratic {
            matrix: vec![vec![2.0, 0.0], vec![0.0, 1.0]],
            vector: Some(vec![2.0, -1.0]),
            constant: None,
        }
        .build()
        .unwrap();
        let g = TimeGrid::with_steps(0.0, 0.05, 100).unwrap();
        let path = BrownianPath::sample(2, g, 1).unwrap();
        let xs = v(&[1.0, -1.0]);
        let traj = simulate_first_order(&p, &DiffusionSchedule::zero(), &path, &xs, None).unwrap();
        assert!(traj.states().all(|z| z == xs));
    }

    #[test]
    fn inertial_first_step() {
        let p = half_squared_norm(1);
        let d = DampingSchedule::power(4.0, 1.0).unwrap();
        let g = TimeGrid::with_steps(1.0, 0.1, 3).unwrap();
        let scales = ScaleTable::new(&d, 1.0, &g).unwrap();
        let path = BrownianPath::zero(1, g);
        let traj = simulate_inertial(
            &p,
            &DiffusionSchedule::zero(),
            &scales,
            &path,
            &v(&[1.0]),
            &v(&[0.0]),
        )
        .unwrap();
        assert_eq!(traj.position(1)[0], 1.0);
        assert_relative_eq!(traj.velocity(1)[0], -0.1, max_relative = 1e-15);
    }

    #[test]
    fn inertial_equilibrium() {
        let p = ProblemSpec::LeastSquares {
            matrix: vec![vec![1.0, 1.0]],
            target: vec![2.0],
        }
        .build()
        .unwrap();
        let d = DampingSchedule::power(3.0, 1.0).unwrap();
        let g = TimeGrid::with_steps(1.0, 0.01, 500).unwrap();
        let scales = ScaleTable::new(&d, 1.0, &g).unwrap();
        let path = BrownianPath::sample(2, g, 3).unwrap();
        let x0 = v(&[0.5, 1.5]);
        let traj = simulate_inertial(
            &p,
            &DiffusionSchedule::zero(),
            &scales,
            &path,
            &x0,
            &Vector::zeros(2),
        )
        .unwrap();
        for k in 0..traj.len() {
            assert_eq!(traj.position(k), x0);
            assert_eq!(traj.velocity(k), Vector::zeros(2));
        }
    }

    #[test]
    fn zero_noise_is_seed_independent_and_bit_exact() {
        let p = half_squared_norm(2);
        let d = DampingSchedule::power(4.0, 1.0).unwrap();
        let g = TimeGrid::new(1.0, 20.0, 0.01).unwrap();
        let scales = ScaleTable::new(&d, 1.0, &g).unwrap();
        let zero = DiffusionSchedule::zero();
        let x0 = v(&[1.0, -2.0]);
        let runs: Vec<_> = [1u64, 1, 999]
            .iter()
            .map(|&seed| {
                let path = BrownianPath::sample(2, g, seed).unwrap();
                simulate_inertial(&p, &zero, &scales, &path, &x0, &Vector::zeros(2)).unwrap()
            })
            .collect();
        assert_eq!(runs[0], runs[1]);
        assert_eq!(runs[0], runs[2]);
    }

    #[test]
    fn seed_reproducibility() {
        let p = half_squared_norm(2);
        let s = DiffusionSchedule::power(0.5, 1.5).unwrap();
        let g = TimeGrid::new(1.0, 10.0, 0.01).unwrap();
        let run = |seed| {
            let path = BrownianPath::sample(2, g, seed).unwrap();
            simulate_first_order(&p, &s, &path, &v(&[1.0, 1.0]), None).unwrap()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn discrete_energy_is_nearly_non_increasing() {
        // Constant damping, zero noise, β = 0: f + |v|²/2 decreases up to O(h²) per step.
        let p = ProblemSpec::Quadratic {
            matrix: vec![vec![3.0, 0.5], vec![0.5, 1.0]],
            vector: None,
            constant: None,
        }
        .build()
        .unwrap();
        let d = DampingSchedule::constant(1.0, 0.0).unwrap();
        let h = 0.01;
        let g = TimeGrid::new(0.0, 30.0, h).unwrap();
        let scales = ScaleTable::new(&d, 1.0, &g).unwrap();
        let path = BrownianPath::zero(2, g);
        let zero = DiffusionSchedule::zero();
        let sys =
            InertialSystem::new(&p, &zero, &scales).with_beta(BetaMode::Custom(Arc::new(|_| 0.0)));
        let traj = sys
            .simulate(&path, &v(&[2.0, -1.0]), &v(&[0.0, 1.0]))
            .unwrap();
        let energy: Vec<f64> = (0..traj.len())
            .map(|k| traj.gap[k] + 0.5 * traj.velocity(k).norm_squared())
            .collect();
        for w in energy.windows(2) {
            assert!(
                w[1] <= w[0] + 10.0 * h * h * (1.0 + w[0]),
                "{} -> {}",
                w[0],
                w[1]
            );
        }
        assert!(energy[energy.len() - 1] < 1e-3 * energy[0]);
    }

    #[test]
    fn overflow_aborts_with_last_valid_index() {
        let p = half_squared_norm(1);
        let g = TimeGrid::with_steps(0.0, 3.0, 5000).unwrap();
        let path = BrownianPath::zero(1, g);
        let traj =
            simulate_first_order(&p, &DiffusionSchedule::zero(), &path, &v(&[1.0]), None).unwrap();
        match traj.status {
            PathStatus::Aborted { last_valid } => {
                assert_eq!(traj.len(), last_valid + 1);
                assert!(traj.last_state()[0].is_finite());
            }
            PathStatus::Completed => panic!("expected overflow"),
        }
    }

    #[test]
    fn overshoot_is_counted() {
        let p = half_squared_norm(1);
        let d = DampingSchedule::power(4.0, 1.0).unwrap();
        let g = TimeGrid::with_steps(1.0, 0.5, 10).unwrap();
        let scales = ScaleTable::new(&d, 1.0, &g).unwrap();
        let path = BrownianPath::zero(1, g);
        let traj = simulate_inertial(
            &p,
            &DiffusionSchedule::zero(),
            &scales,
            &path,
            &v(&[1.0]),
            &v(&[0.0]),
        )
        .unwrap();
        // γ_k h = 2/t_k >= 1 for t_k <= 2.
        assert_eq!(traj.overshoot_steps, 3);
    }

    #[test]
    fn constant_scale_matches_halved_step() {
        // Γ ≡ 1/2: the scaled system is the first-order system with drift step h/2.
        let p = half_squared_norm(1);
        let d = DampingSchedule::constant(2.0, 0.0).unwrap();
        let g = TimeGrid::with_steps(0.0, 0.1, 40).unwrap();
        let scales = ScaleTable::new(&d, 0.0, &g).unwrap();
        let zero = DiffusionSchedule::zero();
        let scaled = simulate_scaled_first_order(
            &p,
            &zero,
            &scales,
            &BrownianPath::zero(1, g),
            &v(&[1.0]),
            None,
        )
        .unwrap();
        let g2 = TimeGrid::with_steps(0.0, 0.05, 40).unwrap();
        let direct =
            simulate_first_order(&p, &zero, &BrownianPath::zero(1, g2), &v(&[1.0]), None).unwrap();
        for k in 0..=40 {
            assert_eq!(scaled.state(k), direct.state(k));
        }
    }

    #[test]
    fn scaled_zero_noise_tracks_rescaled_gradient_flow() {
        // On ½x² the gradient flow is e^{-s}; the scaled system should give e^{-(θ(t) - s0)}.
        let p = half_squared_norm(1);
        let d = DampingSchedule::power(4.0, 1.0).unwrap();
        let h = 1e-3;
        let g = TimeGrid::new(1.0, 4.0, h).unwrap();
        let scales = ScaleTable::new(&d, 0.0, &g).unwrap();
        let traj = simulate_scaled_first_order(
            &p,
            &DiffusionSchedule::zero(),
            &scales,
            &BrownianPath::zero(1, g),
            &v(&[1.0]),
            None,
        )
        .unwrap();
        for k in (0..g.len()).step_by(250) {
            let exact = (-scales.theta[k]).exp();
            let gap_exact = 0.5 * exact * exact;
            assert!((traj.gap[k] - gap_exact).abs() <= 2.0 * h * (1.0 + scales.theta[k]));
        }
    }

    #[test]
    fn csv_dump_has_header_and_final_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = half_squared_norm(2);
        let g = TimeGrid::with_steps(0.0, 0.1, 10).unwrap();
        let traj = simulate_first_order(
            &p,
            &DiffusionSchedule::zero(),
            &BrownianPath::zero(2, g),
            &v(&[1.0, 2.0]),
            None,
        )
        .unwrap();
        let file = dir.path().join("z.csv");
        traj.write_csv(&file, 3).unwrap();
        let text = std::fs::read_to_string(&file).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,z1,z2,f_gap,grad_norm");
        assert_eq!(lines.len(), 1 + 5); // nodes 0, 3, 6, 9, 10
        assert!(lines[5].starts_with("1e0"));
    }

    proptest! {
        #[test]
        fn coarsen_then_values_match_fine_values(seed in 0u64..1000, factor in 1usize..6) {
            let g = TimeGrid::with_steps(0.0, 0.01, 12 * factor).unwrap();
            let fine = BrownianPath::sample(1, g, seed).unwrap();
            let coarse = fine.coarsen(factor).unwrap();
            let wf = fine.values();
            let wc = coarse.values();
            for (k, w) in wc.iter().enumerate() {
                prop_assert!((w[0] - wf[k * factor][0]).abs() < 1e-12);
            }
        }
    }
}
