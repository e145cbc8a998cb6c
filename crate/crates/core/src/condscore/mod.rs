//! Conditional-score estimation for binary and Gaussian responses.
//!
//! The regression design is the `n x p_n` matrix of surrogate scores `W_i`;
//! the measurement error in those scores is `N(0, omega1)` with `omega1`
//! diagonal. Estimating equations condition on the sufficient statistic
//! `Δ(β) = W + Y Ω β`, which removes the attenuation a naive fit suffers.

mod binary;
mod diagnostics;
mod gaussian;
mod glm;
mod newton;

pub use binary::{binary_jacobian, binary_score, conditional_mean_binary, fit_binary, logistic};
pub use diagnostics::{check_assumptions, AssumptionCheck, AssumptionReport, Flag};
pub use gaussian::{
    fit_gaussian, fit_gaussian_with, gaussian_jacobian, gaussian_jacobian_with, gaussian_score,
    gaussian_score_with, GaussianEquation, DEFAULT_OUTER_MAX,
};
pub use glm::{naive_glm, IRLS_MAX_ITER, SEPARATION_NORM};
pub use newton::{newton_solve, NewtonOutcome};

use nalgebra::{DMatrix, DVector};

use crate::covariance::ErrorModel;
use crate::error::{Error, Result};
use crate::fda::{reconstruct_function, Basis, Curve, ScoreMatrix};

/// Response family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Binary,
    Gaussian,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Binary => "binary",
            Family::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Family::Binary),
            "gaussian" => Ok(Family::Gaussian),
            other => Err(format!("unknown family '{other}' (expected binary or gaussian)")),
        }
    }
}

/// Scores, responses and the score-level error model for one fit.
#[derive(Debug, Clone)]
pub struct RegressionData {
    scores: ScoreMatrix,
    response: DVector<f64>,
    error_model: ErrorModel,
    family: Family,
}

impl RegressionData {
    pub fn new(
        scores: ScoreMatrix,
        response: DVector<f64>,
        error_model: ErrorModel,
        family: Family,
    ) -> Result<Self> {
        if scores.nrows() != response.len() {
            return Err(Error::Dimension(format!(
                "{} score rows but {} responses",
                scores.nrows(),
                response.len()
            )));
        }
        if scores.ncols() != error_model.dim() {
            return Err(Error::Dimension(format!(
                "{} score columns but the error model has dimension {}",
                scores.ncols(),
                error_model.dim()
            )));
        }
        if scores.nrows() < 2 {
            return Err(Error::InvalidArgument("need at least 2 observations".into()));
        }
        if scores.matrix().iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("scores and responses must be finite".into()));
        }
        if family == Family::Binary {
            if let Some(i) = response.iter().position(|y| *y != 0.0 && *y != 1.0) {
                return Err(Error::Response(format!(
                    "binary response must be 0 or 1 (row {i} is {})",
                    response[i]
                )));
            }
            let ones = response.iter().filter(|y| **y == 1.0).count();
            if ones == 0 || ones == response.len() {
                return Err(Error::Response("response must contain both classes".into()));
            }
        }
        Ok(RegressionData {
            scores,
            response,
            error_model,
            family,
        })
    }

    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn error_model(&self) -> &ErrorModel {
        &self.error_model
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn p(&self) -> usize {
        self.scores.ncols()
    }

    pub fn with_error_model(&self, error_model: ErrorModel) -> Result<Self> {
        RegressionData::new(self.scores.clone(), self.response.clone(), error_model, self.family)
    }

    /// Column-centered scores and centered response, with the removed means.
    pub fn centered(&self) -> Result<(RegressionData, DVector<f64>, f64)> {
        let (scores, means) = crate::fda::center_scores(&self.scores)?;
        let y_mean = self.response.mean();
        let response = self.response.add_scalar(-y_mean);
        let data = RegressionData {
            scores,
            response,
            error_model: self.error_model.clone(),
            family: self.family,
        };
        Ok((data, means, y_mean))
    }

    /// `(1, W_i')'` rows.
    pub(crate) fn augmented_design(&self) -> DMatrix<f64> {
        let (n, p) = (self.n(), self.p());
        DMatrix::from_fn(n, p + 1, |i, k| if k == 0 { 1.0 } else { self.scores.0[(i, k - 1)] })
    }
}

/// Intercept and slope coefficients, `β_c = (β_0, β')'`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedCoef {
    pub beta0: f64,
    pub beta: DVector<f64>,
}

impl AugmentedCoef {
    pub fn new(beta0: f64, beta: DVector<f64>) -> Self {
        AugmentedCoef { beta0, beta }
    }

    pub fn zeros(p: usize) -> Self {
        AugmentedCoef {
            beta0: 0.0,
            beta: DVector::zeros(p),
        }
    }

    pub fn from_combined(v: &DVector<f64>) -> Self {
        AugmentedCoef {
            beta0: v[0],
            beta: v.rows(1, v.len() - 1).into_owned(),
        }
    }

    pub fn combined(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.beta.len() + 1);
        v[0] = self.beta0;
        v.rows_mut(1, self.beta.len()).copy_from(&self.beta);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.beta0.is_finite() && self.beta.iter().all(|b| b.is_finite())
    }
}

/// Damped Newton settings. `tol` applies to `‖U‖∞ / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub jacobian_ridge: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol: 1e-8,
            max_iter: 100,
            max_halvings: 20,
            jacobian_ridge: 1e-10,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || self.max_halvings == 0 || !(self.jacobian_ridge > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Newton settings must all be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Outcome of a naive or corrected fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coef: AugmentedCoef,
    /// Error variance, Gaussian fits only.
    pub sigma2: Option<f64>,
    /// Reconstructed slope `sum_k β_k ρ_k(t)`.
    pub slope: Curve,
    pub converged: bool,
    /// Newton iterations (summed over σ² rounds for Gaussian fits).
    pub iterations: usize,
    /// `‖U(β)‖∞ / n` at the returned coefficients.
    pub final_residual: f64,
    /// The naive estimate used as the starting point.
    pub initial: AugmentedCoef,
}

pub(crate) fn slope_curve(beta: &DVector<f64>, basis: &Basis) -> Result<Curve> {
    reconstruct_function(beta.as_slice(), basis)
}

/// `Δ(β) = w + y Ω β`.
pub fn delta_statistic(
    w: &DVector<f64>,
    y: f64,
    omega: &DMatrix<f64>,
    beta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let p = w.len();
    if omega.nrows() != p || omega.ncols() != p || beta.len() != p {
        return Err(Error::Dimension(format!(
            "delta statistic: w has {p} entries, omega is {}x{}, beta has {}",
            omega.nrows(),
            omega.ncols(),
            beta.len()
        )));
    }
    Ok(w + omega * beta * y)
}
