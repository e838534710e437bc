//! Convex test objectives with exact oracles.
//!
//! A [`CompositeProblem`] pairs a smooth part `f` (gradient, Lipschitz
//! constant, minimum value, optional solution projector and growth
//! constants) with an optional nonsmooth part `g` accessed through its
//! proximal operator. Simulations use the smoothed drift
//! `∇f + ∇g_λ`, where `g_λ` is the Moreau envelope of `g`.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers;
use crate::{Matrix, Vector};

/// Default Moreau smoothing parameter for composite problems.
pub const DEFAULT_MOREAU_LAMBDA: f64 = 1e-3;

/// Hölderian error bound `f(x) - min f >= kappa * dist(x, S)^exponent`
/// holding on the sublevel set `[f <= min f + sublevel]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBound {
    pub exponent: f64,
    pub kappa: f64,
    pub sublevel: f64,
}

/// How the minimum value of an objective is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinValueSource {
    Exact,
    /// Precomputed by a deterministic solver run to the stated gradient tolerance.
    Numerical {
        tolerance: f64,
    },
}

/// A convex, continuously differentiable function with Lipschitz gradient.
pub trait SmoothObjective: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
    /// Lipschitz constant of the gradient.
    fn lipschitz(&self) -> f64;
    fn min_value(&self) -> f64;
    fn min_value_source(&self) -> MinValueSource {
        MinValueSource::Exact
    }
    /// Euclidean projection onto `argmin f`, when available in closed form.
    fn project_solution(&self, _x: &Vector) -> Option<Vector> {
        None
    }
    /// Polyak–Łojasiewicz constant `mu` with `2 mu (f - min f) <= |∇f|^2`.
    fn pl_constant(&self) -> Option<f64> {
        None
    }
    fn error_bound(&self) -> Option<ErrorBound> {
        None
    }
    /// Dimension of the solution set, when known.
    fn solution_set_dim(&self) -> Option<usize> {
        None
    }
    fn as_quadratic(&self) -> Option<&Quadratic> {
        None
    }
}

/// A proper, lower semicontinuous convex function accessed through its prox.
pub trait NonsmoothTerm: Debug + Send + Sync {
    fn value(&self, x: &Vector) -> f64;
    /// `argmin_y g(y) + |y - x|^2 / (2 lambda)`.
    fn prox(&self, lambda: f64, x: &Vector) -> Vector;
    /// Lipschitz constant of `g` itself, if `g` is Lipschitz.
    fn lipschitz_l0(&self) -> Option<f64> {
        None
    }
    /// The minimal-norm subgradient, when known in closed form.
    fn min_norm_subgradient(&self, _x: &Vector) -> Option<Vector> {
        None
    }
}

/// Gradient of the Moreau envelope, `(x - prox_{λg}(x)) / λ`.
pub fn moreau_grad(g: &dyn NonsmoothTerm, lambda: f64, x: &Vector) -> Result<Vector> {
    check_lambda(lambda)?;
    Ok((x - g.prox(lambda, x)) / lambda)
}

/// Value of the Moreau envelope `g(p) + |x - p|^2 / (2 λ)` with `p = prox_{λg}(x)`.
pub fn moreau_envelope(g: &dyn NonsmoothTerm, lambda: f64, x: &Vector) -> Result<f64> {
    check_lambda(lambda)?;
    let p = g.prox(lambda, x);
    Ok(g.value(&p) + (x - &p).norm_squared() / (2.0 * lambda))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::config(
            "moreau_lambda",
            format!("smoothing parameter must be positive, got {lambda}"),
        ))
    }
}

// ---------------------------------------------------------------------------
// Quadratic and least squares

/// `f(x) = ½ xᵀAx - bᵀx + c` with `A` symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub struct Quadratic {
    a: Matrix,
    b: Vector,
    c: f64,
    pinv: Matrix,
    lambda_max: f64,
    lambda_min_pos: Option<f64>,
    nullity: usize,
    min_value: f64,
}

impl Quadratic {
    pub fn new(a: Matrix, b: Vector, c: f64) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::config(
                "matrix",
                "quadratic matrix must be square and non-empty",
            ));
        }
        if b.len() != n {
            return Err(Error::config(
                "vector",
                format!("expected length {n}, got {}", b.len()),
            ));
        }
        let asym = (&a - a.transpose()).abs().max();
        let scale = a.abs().max().max(1.0);
        if asym > 1e-12 * scale {
            return Err(Error::config(
                "matrix",
                "quadratic matrix must be symmetric",
            ));
        }
        let eig = SymmetricEigen::new(a.clone());
        let lambda_max = eig.eigenvalues.max().max(0.0);
        let cutoff = 1e-10 * scale;
        if eig.eigenvalues.min() < -cutoff {
            return Err(Error::config(
                "matrix",
                format!(
                    "quadratic matrix is not positive semidefinite (eigenvalue {:e})",
                    eig.eigenvalues.min()
                ),
            ));
        }
        let mut pinv = Matrix::zeros(n, n);
        let mut nullity = 0;
        let mut lambda_min_pos: Option<f64> = None;
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam <= cutoff {
                nullity += 1;
                continue;
            }
            lambda_min_pos = Some(lambda_min_pos.map_or(lam, |m| m.min(lam)));
            let v = eig.eigenvectors.column(i);
            pinv += (v * v.transpose()) / lam;
        }
        let xp = &pinv * &b;
        let residual = (&a * &xp - &b).norm();
        if residual > 1e-8 * (1.0 + b.norm()) {
            return Err(Error::config(
                "vector",
                "linear term has a component in the null space of the matrix; the quadratic is unbounded below",
            ));
        }
        let min_value = -0.5 * b.dot(&xp) + c;
        Ok(Self {
            a,
            b,
            c,
            pinv,
            lambda_max,
            lambda_min_pos,
            nullity,
            min_value,
        })
    }

    /// `½|Mx - y|²` written in quadratic form.
    pub fn least_squares(m: &Matrix, y: &Vector) -> Result<Self> {
        if m.nrows() != y.len() {
            return Err(Error::config(
                "target",
                format!("expected {} entries, got {}", m.nrows(), y.len()),
            ));
        }
        let a = m.transpose() * m;
        let a = 0.5 * (&a + a.transpose());
        let b = m.transpose() * y;
        Self::new(a, b, 0.5 * y.norm_squared())
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn linear_term(&self) -> &Vector {
        &self.b
    }

    /// Minimum-norm minimizer `A⁺b`.
    pub fn min_norm_minimizer(&self) -> Vector {
        &self.pinv * &self.b
    }
}

impl SmoothObjective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.a * x)) - self.b.dot(x) + self.c
    }
    fn gradient(&self, x: &Vector) -> Vector {
        &self.a * x - &self.b
    }
    fn lipschitz(&self) -> f64 {
        self.lambda_max
    }
    fn min_value(&self) -> f64 {
        self.min_value
    }
    fn project_solution(&self, x: &Vector) -> Option<Vector> {
        Some(x - &self.pinv * (&self.a * x - &self.b))
    }
    fn pl_constant(&self) -> Option<f64> {
        self.lambda_min_pos
    }
    fn error_bound(&self) -> Option<ErrorBound> {
        self.lambda_min_pos.map(|mu| ErrorBound {
            exponent: 2.0,
            kappa: 0.5 * mu,
            sublevel: f64::INFINITY,
        })
    }
    fn solution_set_dim(&self) -> Option<usize> {
        Some(self.nullity)
    }
    fn as_quadratic(&self) -> Option<&Quadratic> {
        Some(self)
    }
}

// ---------------------------------------------------------------------------
// Logistic regression

/// Mean logistic loss `(1/n) Σ log(1 + exp(-y_i a_iᵀw))` with labels in {-1, +1}.
#[derive(Debug, Clone)]
pub struct Logistic {
    features: Matrix,
    labels: Vector,
    lipschitz: f64,
    minimizer: Vector,
    min_value: f64,
    tolerance: f64,
}

/// Gradient tolerance used to precompute the logistic minimum.
pub const LOGISTIC_MIN_TOLERANCE: f64 = 1e-10;

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    /// Labels may be given as {0, 1} or {-1, +1}. The data must not be
    /// linearly separable, otherwise the minimum is not attained.
    pub fn new(features: Matrix, labels: &[f64]) -> Result<Self> {
        let n = features.nrows();
        if n == 0 || labels.len() != n {
            return Err(Error::config(
                "labels",
                format!("expected {n} labels, got {}", labels.len()),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("samples", "sample matrix must be finite"));
        }
        let labels: Vec<f64> = labels
            .iter()
            .map(|&y| match y {
                1.0 => Ok(1.0),
                0.0 | -1.0 => Ok(-1.0),
                other => Err(Error::config(
                    "labels",
                    format!("label {other} is not in {{0, 1, -1}}"),
                )),
            })
            .collect::<Result<_>>()?;
        let labels = Vector::from_vec(labels);
        let gram = features.transpose() * &features;
        let lipschitz = SymmetricEigen::new(gram).eigenvalues.max() / (4.0 * n as f64);
        let mut me = Self {
            features,
            labels,
            lipschitz,
            minimizer: Vector::zeros(0),
            min_value: f64::NAN,
            tolerance: LOGISTIC_MIN_TOLERANCE,
        };
        let d = me.features.ncols();
        let sol = solvers::newton(
            |w| me.value(w),
            |w| me.gradient(w),
            |w| me.hessian(w),
            Vector::zeros(d),
            LOGISTIC_MIN_TOLERANCE,
            200,
        )
        .map_err(|e| {
            Error::config(
                "samples",
                format!("logistic minimum not attained (separable or rank-deficient data?): {e}"),
            )
        })?;
        // Separable data drives the iterate to infinity while the gradient
        // still vanishes numerically; a flat Hessian exposes it.
        let curvature = SymmetricEigen::new(me.hessian(&sol.x)).eigenvalues.min();
        if !(curvature > 1e-8 * me.lipschitz.max(f64::MIN_POSITIVE)) {
            return Err(Error::config(
                "samples",
                "logistic minimum not attained: data are (nearly) linearly separable",
            ));
        }
        me.min_value = me.value(&sol.x);
        me.minimizer = sol.x;
        Ok(me)
    }

    fn margins(&self, w: &Vector) -> Vector {
        (&self.features * w).component_mul(&self.labels)
    }

    fn hessian(&self, w: &Vector) -> Matrix {
        let n = self.features.nrows() as f64;
        let m = self.margins(w);
        let mut h = Matrix::zeros(self.features.ncols(), self.features.ncols());
        for (i, row) in self.features.row_iter().enumerate() {
            let s = sigmoid(m[i]);
            let weight = s * (1.0 - s) / n;
            h += weight * row.transpose() * row;
        }
        h
    }

    pub fn minimizer(&self) -> &Vector {
        &self.minimizer
    }
}

impl SmoothObjective for Logistic {
    fn dim(&self) -> usize {
        self.features.ncols()
    }
    fn value(&self, w: &Vector) -> f64 {
        let n = self.features.nrows() as f64;
        self.margins(w).iter().map(|&z| softplus(-z)).sum::<f64>() / n
    }
    fn gradient(&self, w: &Vector) -> Vector {
        let n = self.features.nrows() as f64;
        let m = self.margins(w);
        let coeff = Vector::from_iterator(
            m.len(),
            m.iter()
                .zip(self.labels.iter())
                .map(|(&z, &y)| -y * sigmoid(-z) / n),
        );
        self.features.transpose() * coeff
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    fn min_value(&self) -> f64 {
        self.min_value
    }
    fn min_value_source(&self) -> MinValueSource {
        MinValueSource::Numerical {
            tolerance: self.tolerance,
        }
    }
    fn project_solution(&self, _x: &Vector) -> Option<Vector> {
        Some(self.minimizer.clone())
    }
    fn solution_set_dim(&self) -> Option<usize> {
        Some(0)
    }
}

// ---------------------------------------------------------------------------
// Huber

/// Separable Huber loss `Σ h_δ(x_i - c_i)` with
/// `h_δ(r) = r²/2` for `|r| <= δ` and `δ(|r| - δ/2)` otherwise.
#[derive(Debug, Clone)]
pub struct Huber {
    center: Vector,
    delta: f64,
}

impl Huber {
    pub fn new(center: Vector, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::config(
                "delta",
                format!("must be positive, got {delta}"),
            ));
        }
        if center.is_empty() {
            return Err(Error::config("center", "must be non-empty"));
        }
        Ok(Self { center, delta })
    }
}

impl SmoothObjective for Huber {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        let d = self.delta;
        (x - &self.center)
            .iter()
            .map(|&r| {
                if r.abs() <= d {
                    0.5 * r * r
                } else {
                    d * (r.abs() - 0.5 * d)
                }
            })
            .sum()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        (x - &self.center).map(|r| r.clamp(-self.delta, self.delta))
    }
    fn lipschitz(&self) -> f64 {
        1.0
    }
    fn min_value(&self) -> f64 {
        0.0
    }
    fn project_solution(&self, _x: &Vector) -> Option<Vector> {
        Some(self.center.clone())
    }
    fn error_bound(&self) -> Option<ErrorBound> {
        Some(ErrorBound {
            exponent: 2.0,
            kappa: 0.5,
            sublevel: 0.5 * self.delta * self.delta,
        })
    }
    fn solution_set_dim(&self) -> Option<usize> {
        Some(0)
    }
}

// ---------------------------------------------------------------------------
// Nonsmooth terms

/// `g(x) = w |x|_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Norm {
    pub weight: f64,
}

impl NonsmoothTerm for L1Norm {
    fn value(&self, x: &Vector) -> f64 {
        self.weight * x.abs().sum()
    }
    fn prox(&self, lambda: f64, x: &Vector) -> Vector {
        let thr = lambda * self.weight;
        x.map(|v| v.signum() * (v.abs() - thr).max(0.0))
    }
    fn lipschitz_l0(&self) -> Option<f64> {
        Some(self.weight)
    }
    fn min_norm_subgradient(&self, x: &Vector) -> Option<Vector> {
        Some(x.map(|v| {
            if v == 0.0 {
                0.0
            } else {
                self.weight * v.signum()
            }
        }))
    }
}

/// `g(x) = (w/2) |x|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredNorm {
    pub weight: f64,
}

impl NonsmoothTerm for SquaredNorm {
    fn value(&self, x: &Vector) -> f64 {
        0.5 * self.weight * x.norm_squared()
    }
    fn prox(&self, lambda: f64, x: &Vector) -> Vector {
        x / (1.0 + lambda * self.weight)
    }
    fn min_norm_subgradient(&self, x: &Vector) -> Option<Vector> {
        Some(self.weight * x)
    }
}

// ---------------------------------------------------------------------------
// Composite

/// `F = f + g` together with the Moreau smoothing parameter used in simulations.
#[derive(Debug, Clone)]
pub struct CompositeProblem {
    f: Arc<dyn SmoothObjective>,
    g: Option<Arc<dyn NonsmoothTerm>>,
    moreau_lambda: f64,
    min_value: f64,
    min_value_source: MinValueSource,
}

/// Tolerance for the numerical minimum of composite problems.
pub const COMPOSITE_MIN_TOLERANCE: f64 = 1e-10;

impl CompositeProblem {
    pub fn smooth(f: impl SmoothObjective + 'static) -> Self {
        Self::from_arc(Arc::new(f))
    }

    pub fn from_arc(f: Arc<dyn SmoothObjective>) -> Self {
        Self {
            min_value: f.min_value(),
            min_value_source: f.min_value_source(),
            f,
            g: None,
            moreau_lambda: DEFAULT_MOREAU_LAMBDA,
        }
    }

    /// Builds `f + g`; the minimum of `F` is precomputed by accelerated
    /// proximal gradient.
    pub fn composite(
        f: impl SmoothObjective + 'static,
        g: impl NonsmoothTerm + 'static,
        moreau_lambda: f64,
    ) -> Result<Self> {
        check_lambda(moreau_lambda)?;
        let f: Arc<dyn SmoothObjective> = Arc::new(f);
        let g: Arc<dyn NonsmoothTerm> = Arc::new(g);
        let lip = f.lipschitz().max(1e-12);
        let sol = solvers::accelerated_prox_grad(
            |x| f.gradient(x),
            |s, x| g.prox(s, x),
            lip,
            Vector::zeros(f.dim()),
            COMPOSITE_MIN_TOLERANCE,
            2_000_000,
        )?;
        let min_value = f.value(&sol.x) + g.value(&sol.x);
        Ok(Self {
            f,
            g: Some(g),
            moreau_lambda,
            min_value,
            min_value_source: MinValueSource::Numerical {
                tolerance: COMPOSITE_MIN_TOLERANCE,
            },
        })
    }

    pub fn with_moreau_lambda(mut self, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        self.moreau_lambda = lambda;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn smooth_part(&self) -> &dyn SmoothObjective {
        self.f.as_ref()
    }

    pub fn nonsmooth_part(&self) -> Option<&dyn NonsmoothTerm> {
        self.g.as_deref()
    }

    pub fn moreau_lambda(&self) -> f64 {
        self.moreau_lambda
    }

    /// `F(x) = f(x) + g(x)`.
    pub fn value(&self, x: &Vector) -> f64 {
        self.f.value(x) + self.g.as_ref().map_or(0.0, |g| g.value(x))
    }

    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    pub fn min_value_source(&self) -> MinValueSource {
        self.min_value_source
    }

    /// `F(x) - min F`.
    pub fn gap(&self, x: &Vector) -> f64 {
        self.value(x) - self.min_value
    }

    /// The simulated drift `∇f(x) + ∇g_λ(x)`.
    pub fn drift(&self, x: &Vector) -> Vector {
        let mut d = self.f.gradient(x);
        if let Some(g) = &self.g {
            d += (x - g.prox(self.moreau_lambda, x)) / self.moreau_lambda;
        }
        d
    }

    /// Lipschitz constant of the drift, `L + 1/λ` when `g` is present.
    pub fn drift_lipschitz(&self) -> f64 {
        self.f.lipschitz() + self.g.as_ref().map_or(0.0, |_| 1.0 / self.moreau_lambda)
    }

    /// Projection onto `argmin F`; only available for smooth problems.
    pub fn project_solution(&self, x: &Vector) -> Option<Vector> {
        match self.g {
            None => self.f.project_solution(x),
            Some(_) => None,
        }
    }

    /// The minimum-norm minimizer `proj_S(0)`.
    pub fn min_norm_solution(&self) -> Option<Vector> {
        self.project_solution(&Vector::zeros(self.dim()))
    }

    pub fn solution_set_dim(&self) -> Option<usize> {
        match self.g {
            None => self.f.solution_set_dim(),
            Some(_) => None,
        }
    }

    pub fn pl_constant(&self) -> Option<f64> {
        self.g.is_none().then(|| self.f.pl_constant()).flatten()
    }

    pub fn error_bound(&self) -> Option<ErrorBound> {
        self.g.is_none().then(|| self.f.error_bound()).flatten()
    }
}

// ---------------------------------------------------------------------------
// Fixture specifications

/// Declarative description of a builtin fixture, as found in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `½ xᵀAx - bᵀx + c`.
    Quadratic {
        matrix: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vector: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        constant: Option<f64>,
    },
    /// `½ |Mx - y|²`.
    LeastSquares {
        matrix: Vec<Vec<f64>>,
        target: Vec<f64>,
    },
    /// Mean logistic loss on inline samples or a CSV file whose last column holds labels.
    Logistic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        samples: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        csv: Option<String>,
    },
    /// `½ |Mx - y|² + w |x|_1`.
    L1LeastSquares {
        matrix: Vec<Vec<f64>>,
        target: Vec<f64>,
        weight: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        moreau_lambda: Option<f64>,
    },
    /// Separable Huber loss around `center`.
    Huber { center: Vec<f64>, delta: f64 },
}

pub(crate) fn matrix_from_rows(key: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::config(key, "matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(
            key,
            "all matrix rows must have the same length",
        ));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn read_csv_samples(path: &str) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("csv", format!("cannot read {path}: {e}")))?;
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let mut fields = match fields {
            Ok(f) => f,
            // A non-numeric first line is a header.
            Err(_) if samples.is_empty() && labels.is_empty() => continue,
            Err(e) => {
                return Err(Error::config("csv", format!("{path}:{}: {e}", lineno + 1)));
            }
        };
        let label = fields
            .pop()
            .ok_or_else(|| Error::config("csv", format!("{path}:{}: empty row", lineno + 1)))?;
        samples.push(fields);
        labels.push(label);
    }
    Ok((samples, labels))
}

impl ProblemSpec {
    /// Resolves the specification into a problem with its oracles.
    pub fn build(&self) -> Result<CompositeProblem> {
        match self {
            ProblemSpec::Quadratic {
                matrix,
                vector,
                constant,
            } => {
                let a = matrix_from_rows("matrix", matrix)?;
                let b = match vector {
                    Some(v) => Vector::from_column_slice(v),
                    None => Vector::zeros(a.nrows()),
                };
                Ok(CompositeProblem::smooth(Quadratic::new(
                    a,
                    b,
                    constant.unwrap_or(0.0),
                )?))
            }
            ProblemSpec::LeastSquares { matrix, target } => {
                let m = matrix_from_rows("matrix", matrix)?;
                Ok(CompositeProblem::smooth(Quadratic::least_squares(
                    &m,
                    &Vector::from_column_slice(target),
                )?))
            }
            ProblemSpec::Logistic {
                samples,
                labels,
                csv,
            } => {
                let (samples, labels) =
                    match (samples, labels, csv) {
                        (Some(s), Some(l), None) => (s.clone(), l.clone()),
                        (None, None, Some(path)) => read_csv_samples(path)?,
                        _ => return Err(Error::config(
                            "samples",
                            "logistic needs either inline `samples` and `labels` or a `csv` path",
                        )),
                    };
                let m = matrix_from_rows("samples", &samples)?;
                Ok(CompositeProblem::smooth(Logistic::new(m, &labels)?))
            }
            ProblemSpec::L1LeastSquares {
                matrix,
                target,
                weight,
                moreau_lambda,
            } => {
                if !(*weight >= 0.0) {
                    return Err(Error::config("weight", "l1 weight must be nonnegative"));
                }
                let m = matrix_from_rows("matrix", matrix)?;
                let f = Quadratic::least_squares(&m, &Vector::from_column_slice(target))?;
                CompositeProblem::composite(
                    f,
                    L1Norm { weight: *weight },
                    moreau_lambda.unwrap_or(DEFAULT_MOREAU_LAMBDA),
                )
            }
            ProblemSpec::Huber { center, delta } => Ok(CompositeProblem::smooth(Huber::new(
                Vector::from_column_slice(center),
                *delta,
            )?)),
        }
    }
}

/// Builds one of the builtin fixtures.
pub fn builtin_problem(spec: &ProblemSpec) -> Result<CompositeProblem> {
    spec.build()
}

/// `f(x) = ½|x|²` in dimension `dim`.
pub fn half_squared_norm(dim: usize) -> CompositeProblem {
    CompositeProblem::smooth(
        Quadratic::new(Matrix::identity(dim, dim), Vector::zeros(dim), 0.0)
            .expect("identity quadratic is valid"),
    )
}
