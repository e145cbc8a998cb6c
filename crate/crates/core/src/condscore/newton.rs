use nalgebra::{DMatrix, DVector};

use super::NewtonConfig;
use crate::error::{Error, Result};

/// Pivot ratio below which the ridged Jacobian is treated as singular.
const PIVOT_RATIO_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub root: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// `‖U(root)‖∞ / n`.
    pub final_residual: f64,
    /// Total step halvings taken across all iterations.
    pub halvings: usize,
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, x| if x.is_nan() { f64::NAN } else { acc.max(x.abs()) })
}

/// Damped Newton–Raphson for `U(β) = 0`.
///
/// Each step solves `(J + ridge·I) d = -U`, then halves `d` until the sup
/// norm of the score decreases or `max_halvings` is reached. Stops once
/// `‖U‖∞ / n_obs <= tol`. Running out of iterations is reported through
/// `converged = false`, not as an error.
pub fn newton_solve<S, J>(
    score: S,
    jacobian: J,
    init: DVector<f64>,
    n_obs: usize,
    cfg: &NewtonConfig,
) -> Result<NewtonOutcome>
where
    S: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    cfg.validate()?;
    let dim = init.len();
    let scale = n_obs.max(1) as f64;
    let mut beta = init;
    let mut u = score(&beta);
    if u.len() != dim {
        return Err(Error::Dimension(format!(
            "score has {} components for a {dim}-dimensional parameter",
            u.len()
        )));
    }
    let mut resid = sup_norm(&u);
    if !resid.is_finite() {
        return Err(Error::Estimation("score is not finite at the initial value".into()));
    }
    let mut iterations = 0;
    let mut halvings = 0;

    while resid / scale > cfg.tol && iterations < cfg.max_iter {
        let jac = jacobian(&beta);
        if jac.nrows() != dim || jac.ncols() != dim {
            return Err(Error::Dimension(format!(
                "Jacobian is {}x{} for a {dim}-dimensional parameter",
                jac.nrows(),
                jac.ncols()
            )));
        }
        let ridged = jac + DMatrix::identity(dim, dim) * cfg.jacobian_ridge;
        let lu = ridged.lu();
        let pivots = lu.u().diagonal().map(f64::abs);
        let (lo, hi) = (pivots.min(), pivots.max());
        if !(hi > 0.0) || lo / hi < PIVOT_RATIO_FLOOR {
            return Err(Error::SingularJacobian(format!(
                "pivot ratio {:.3e} at iteration {iterations}",
                if hi > 0.0 { lo / hi } else { 0.0 }
            )));
        }
        let step = lu
            .solve(&(-&u))
            .filter(|d| d.iter().all(|x| x.is_finite()))
            .ok_or_else(|| Error::SingularJacobian(format!("solve failed at iteration {iterations}")))?;

        let mut h = 0;
        let (cand, cand_u, cand_resid) = loop {
            let factor = 0.5f64.powi(h as i32);
            let cand = &beta + &step * factor;
            let cu = score(&cand);
            let cr = sup_norm(&cu);
            if (cr.is_finite() && cr < resid) || h >= cfg.max_halvings {
                break (cand, cu, cr);
            }
            h += 1;
        };
        halvings += h;
        iterations += 1;
        if !cand_resid.is_finite() {
            return Err(Error::Estimation(format!(
                "score became non-finite at iteration {iterations}"
            )));
        }
        beta = cand;
        u = cand_u;
        resid = cand_resid;
    }

    Ok(NewtonOutcome {
        converged: resid / scale <= cfg.tol,
        root: beta,
        iterations,
        final_residual: resid / scale,
        halvings,
    })
}
