use nalgebra::{DMatrix, DVector};

use super::glm::{naive_glm, IRLS_MAX_ITER};
use super::newton::newton_solve;
use super::{slope_curve, AugmentedCoef, Family, FitResult, NewtonConfig, RegressionData};
use crate::error::{Error, Result};
use crate::fda::Basis;

/// `F(t) = 1 / (1 + e^{-t})`, evaluated without overflow.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `P(Y = 1 | Δ = δ) = F{β_0 + (δ - Ωβ/2)'β}`.
pub fn conditional_mean_binary(
    delta: &DVector<f64>,
    beta_c: &AugmentedCoef,
    omega: &DMatrix<f64>,
) -> Result<f64> {
    let p = beta_c.beta.len();
    if delta.len() != p || omega.nrows() != p || omega.ncols() != p {
        return Err(Error::Dimension(format!(
            "conditional mean: delta has {}, beta has {p}, omega is {}x{}",
            delta.len(),
            omega.nrows(),
            omega.ncols()
        )));
    }
    let shifted = delta - omega * &beta_c.beta * 0.5;
    Ok(logistic(beta_c.beta0 + shifted.dot(&beta_c.beta)))
}

fn check_binary(beta_c: &DVector<f64>, data: &RegressionData) -> Result<()> {
    if data.family() != Family::Binary {
        return Err(Error::InvalidArgument("binary score needs a binary family".into()));
    }
    if beta_c.len() != data.p() + 1 {
        return Err(Error::Dimension(format!(
            "beta_c has {} entries, expected {}",
            beta_c.len(),
            data.p() + 1
        )));
    }
    Ok(())
}

/// `Ω_c β_c` for the bordered `Ω_c = [0 0'; 0 Ω]`.
fn bordered_omega_times(omega_diag: &DVector<f64>, beta_c: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(beta_c.len(), |k, _| if k == 0 { 0.0 } else { omega_diag[k - 1] * beta_c[k] })
}

/// Conditional score for the logistic model,
/// `U(β_c) = Σ [Y_i - F{δ_ci'β_c - β_c'Ω_cβ_c/2}] (δ_ci - Ω_cβ_c)`
/// with `δ_ci = W_ci + Y_i Ω_c β_c` and `W_ci = (1, W_i')'`.
pub fn binary_score(beta_c: &AugmentedCoef, data: &RegressionData) -> Result<DVector<f64>> {
    let b = beta_c.combined();
    check_binary(&b, data)?;
    Ok(binary_score_vec(&b, data))
}

pub(crate) fn binary_score_vec(b: &DVector<f64>, data: &RegressionData) -> DVector<f64> {
    let omega_b = bordered_omega_times(&data.error_model().omega_diag(), b);
    let quad = b.dot(&omega_b);
    let scores = data.scores().matrix();
    let q = b.len();
    let mut u = DVector::zeros(q);
    for (i, &y) in data.response().iter().enumerate() {
        // delta_ci = W_ci + y * Omega_c beta_c
        let delta = DVector::from_fn(q, |k, _| {
            let w = if k == 0 { 1.0 } else { scores[(i, k - 1)] };
            w + y * omega_b[k]
        });
        let resid = y - logistic(delta.dot(b) - 0.5 * quad);
        u.axpy(resid, &(delta - &omega_b), 1.0);
    }
    u
}

/// Analytic `∂U/∂β_c` of [`binary_score`]; with
/// `t_i = W_ci'β_c + (Y_i - 1/2) β_c'Ω_cβ_c`,
/// `J = -Σ F(t_i)(Y_i-1)Ω_c - Σ F(1-F) g_i h_i'` where
/// `g_i = W_ci + (Y_i-1)Ω_cβ_c` and `h_i = W_ci + 2(Y_i-1/2)Ω_cβ_c`.
pub fn binary_jacobian(beta_c: &AugmentedCoef, data: &RegressionData) -> Result<DMatrix<f64>> {
    let b = beta_c.combined();
    check_binary(&b, data)?;
    Ok(binary_jacobian_mat(&b, data))
}

pub(crate) fn binary_jacobian_mat(b: &DVector<f64>, data: &RegressionData) -> DMatrix<f64> {
    let omega_diag = data.error_model().omega_diag();
    let omega_b = bordered_omega_times(&omega_diag, b);
    let quad = b.dot(&omega_b);
    let scores = data.scores().matrix();
    let q = b.len();
    let mut jac = DMatrix::zeros(q, q);
    let mut omega_weight = 0.0;
    for (i, &y) in data.response().iter().enumerate() {
        let wc = DVector::from_fn(q, |k, _| if k == 0 { 1.0 } else { scores[(i, k - 1)] });
        let t = wc.dot(b) + (y - 0.5) * quad;
        let f = logistic(t);
        omega_weight += f * (y - 1.0);
        let g = &wc + &omega_b * (y - 1.0);
        let h = &wc + &omega_b * (2.0 * (y - 0.5));
        jac.ger(-f * (1.0 - f), &g, &h, 1.0);
    }
    for k in 1..q {
        jac[(k, k)] -= omega_weight * omega_diag[k - 1];
    }
    jac
}

/// Corrected logistic fit: Newton on [`binary_score`] from the naive MLE.
pub fn fit_binary(data: &RegressionData, basis: &Basis, cfg: &NewtonConfig) -> Result<FitResult> {
    if data.family() != Family::Binary {
        return Err(Error::InvalidArgument("fit_binary needs a binary family".into()));
    }
    let naive = naive_glm(data, IRLS_MAX_ITER)?;
    let outcome = newton_solve(
        |b| binary_score_vec(b, data),
        |b| binary_jacobian_mat(b, data),
        naive.combined(),
        data.n(),
        cfg,
    )?;
    let coef = AugmentedCoef::from_combined(&outcome.root);
    let slope = slope_curve(&coef.beta, basis)?;
    Ok(FitResult {
        coef,
        sigma2: None,
        slope,
        converged: outcome.converged,
        iterations: outcome.iterations,
        final_residual: outcome.final_residual,
        initial: naive,
    })
}
