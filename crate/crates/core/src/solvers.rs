//! Deterministic convex solvers used to precompute minima and regularized minimizers.

use crate::error::{Error, Result};
use crate::Vector;

/// Outcome of an iterative solve.
#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub x: Vector,
    pub residual: f64,
    pub iterations: usize,
}

/// Accelerated proximal gradient with gradient-based adaptive restart for
/// `min smooth(x) + nonsmooth(x)`.
///
/// `prox(step, x)` must return `prox_{step * nonsmooth}(x)`. The residual is the
/// norm of the gradient mapping `(x - prox(x - step * grad(x))) / step`, which
/// reduces to `|grad(x)|` when the prox is the identity.
pub(crate) fn accelerated_prox_grad<G, P>(
    grad: G,
    prox: P,
    lipschitz: f64,
    x0: Vector,
    tol: f64,
    max_iter: usize,
) -> Result<Solution>
where
    G: Fn(&Vector) -> Vector,
    P: Fn(f64, &Vector) -> Vector,
{
    if !(lipschitz > 0.0) || !lipschitz.is_finite() {
        return Err(Error::Numeric(format!(
            "invalid step Lipschitz constant {lipschitz}"
        )));
    }
    let step = 1.0 / lipschitz;
    let mut x = x0.clone();
    let mut y = x0;
    let mut t = 1.0_f64;
    for k in 0..max_iter {
        let gy = grad(&y);
        let x_next = prox(step, &(&y - step * &gy));
        let gx = grad(&x_next);
        let mapped = prox(step, &(&x_next - step * &gx));
        let residual = (&x_next - &mapped).norm() / step;
        if !residual.is_finite() {
            return Err(Error::Numeric(
                "non-finite iterate in proximal gradient".into(),
            ));
        }
        if residual <= tol {
            return Ok(Solution {
                x: x_next,
                residual,
                iterations: k + 1,
            });
        }
        // Restart momentum when it points uphill.
        let restart = (&y - &x_next).dot(&(&x_next - &x)) > 0.0;
        let t_next = if restart {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
        };
        let beta = if restart { 0.0 } else { (t - 1.0) / t_next };
        y = &x_next + beta * (&x_next - &x);
        x = x_next;
        t = t_next;
    }
    Err(Error::Numeric(format!(
        "proximal gradient did not reach residual {tol:e} in {max_iter} iterations"
    )))
}

/// Damped Newton iteration for smooth, strictly convex objectives.
pub(crate) fn newton<F, G, H>(
    value: F,
    grad: G,
    hessian: H,
    x0: Vector,
    tol: f64,
    max_iter: usize,
) -> Result<Solution>
where
    F: Fn(&Vector) -> f64,
    G: Fn(&Vector) -> Vector,
    H: Fn(&Vector) -> crate::Matrix,
{
    let mut x = x0;
    for k in 0..max_iter {
        let g = grad(&x);
        let residual = g.norm();
        if !residual.is_finite() {
            return Err(Error::Numeric(
                "non-finite gradient in Newton iteration".into(),
            ));
        }
        if residual <= tol {
            return Ok(Solution {
                x,
                residual,
                iterations: k,
            });
        }
        let h = hessian(&x);
        let dir = h
            .cholesky()
            .map(|c| c.solve(&(-&g)))
            .ok_or_else(|| Error::Numeric("Hessian is not positive definite".into()))?;
        let f0 = value(&x);
        let slope = g.dot(&dir);
        let mut step = 1.0;
        loop {
            let trial = &x + step * &dir;
            // Near the optimum the value stalls at rounding level; accept
            // steps that still shrink the gradient.
            let accept =
                value(&trial) <= f0 + 1e-4 * step * slope || grad(&trial).norm() < 0.5 * residual;
            if accept || step < 1e-12 {
                x = trial;
                break;
            }
            step *= 0.5;
        }
    }
    Err(Error::Numeric(format!(
        "Newton iteration did not reach gradient norm {tol:e} in {max_iter} iterations"
    )))
}
