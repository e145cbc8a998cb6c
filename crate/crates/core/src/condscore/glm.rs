use nalgebra::{DMatrix, DVector};

use super::binary::logistic;
use super::{AugmentedCoef, Family, RegressionData};
use crate::error::{Error, Result};

pub const IRLS_MAX_ITER: usize = 100;
/// IRLS coefficient norm that signals (quasi-)perfect separation.
pub const SEPARATION_NORM: f64 = 1e3;

/// Regression of `Y` on `(1, W)` ignoring measurement error: least squares
/// for Gaussian responses, logistic maximum likelihood by IRLS for binary.
pub fn naive_glm(data: &RegressionData, max_iter: usize) -> Result<AugmentedCoef> {
    match data.family() {
        Family::Gaussian => ols(data),
        Family::Binary => logistic_irls(data, max_iter),
    }
}

fn ols(data: &RegressionData) -> Result<AugmentedCoef> {
    let (centered, means, y_mean) = data.centered()?;
    let w = centered.scores().matrix();
    let gram = w.transpose() * w;
    let rhs = w.transpose() * centered.response();
    let beta = solve_spd(gram, &rhs, "least-squares Gram matrix")?;
    let beta0 = y_mean - beta.dot(&means);
    Ok(AugmentedCoef::new(beta0, beta))
}

fn solve_spd(gram: DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let p = gram.nrows();
    if p == 0 {
        return Ok(DVector::zeros(0));
    }
    let diag_max = gram.diagonal().amax();
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::SingularDesign(format!("{what} is not positive definite")))?;
    let l_diag = chol.l_dirty().diagonal();
    let ratio = l_diag.min().powi(2) / diag_max.max(f64::MIN_POSITIVE);
    if !(ratio > 1e-13) {
        return Err(Error::SingularDesign(format!(
            "{what} is numerically singular (pivot ratio {ratio:.3e})"
        )));
    }
    Ok(chol.solve(rhs))
}

fn logistic_irls(data: &RegressionData, max_iter: usize) -> Result<AugmentedCoef> {
    let x = data.augmented_design();
    let y = data.response();
    let (n, q) = (x.nrows(), x.ncols());
    let ybar = y.mean();
    let mut beta = DVector::zeros(q);
    beta[0] = (ybar / (1.0 - ybar)).ln();

    for iter in 0..max_iter.max(1) {
        let eta = &x * &beta;
        let mu = eta.map(logistic);
        let weights = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        let mut xtwx = DMatrix::zeros(q, q);
        let mut xtwz = DVector::zeros(q);
        for i in 0..n {
            let row = x.row(i);
            let z = eta[i] + (y[i] - mu[i]) / weights[i];
            xtwx.ger(weights[i], &row.transpose(), &row.transpose(), 1.0);
            xtwz.axpy(weights[i] * z, &row.transpose(), 1.0);
        }
        let next = solve_spd(xtwx, &xtwz, "logistic information matrix")?;
        if next.norm() > SEPARATION_NORM || !next.iter().all(|b| b.is_finite()) {
            return Err(Error::Separation(format!(
                "coefficient norm {:.3e} exceeded {SEPARATION_NORM:e} at IRLS iteration {iter}; \
                 the classes are (nearly) perfectly separated by the scores",
                next.norm()
            )));
        }
        let change = (&next - &beta).amax();
        beta = next;
        let worst = (&x * &beta).map(logistic).zip_map(y, |m, yi| (yi - m).abs()).amax();
        if worst < 1e-8 {
            return Err(Error::Separation(format!(
                "fitted probabilities reproduce every response (largest miss {worst:.1e}) at IRLS iteration {iter}; \
                 the classes are perfectly separated by the scores"
            )));
        }
        if change <= 1e-13 * (1.0 + beta.amax()) {
            break;
        }
    }
    Ok(AugmentedCoef::from_combined(&beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::ErrorModel;
    use crate::fda::ScoreMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_linear_fit() {
        let w = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let y = w.column(0) * 2.0;
        let data = RegressionData::new(ScoreMatrix(w), y, ErrorModel::zero(2), Family::Gaussian).unwrap();
        let c = naive_glm(&data, IRLS_MAX_ITER).unwrap();
        assert!(c.beta0.abs() < 1e-14);
        assert!((c.beta[0] - 2.0).abs() < 1e-14 && c.beta[1].abs() < 1e-14);
    }

    #[test]
    fn singular_design_is_rejected() {
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 2.5]);
        let data = RegressionData::new(ScoreMatrix(w), y, ErrorModel::zero(2), Family::Gaussian).unwrap();
        assert!(matches!(naive_glm(&data, 10), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn separation_is_detected() {
        let w = DMatrix::from_row_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let data = RegressionData::new(ScoreMatrix(w), y, ErrorModel::zero(1), Family::Binary).unwrap();
        assert!(matches!(naive_glm(&data, IRLS_MAX_ITER), Err(Error::Separation(_))));
    }

    #[test]
    fn permuted_labels_give_null_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let w = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| if rng.gen_bool(0.3) { 1.0 } else { 0.0 });
        let ybar = y.mean();
        let data = RegressionData::new(ScoreMatrix(w), y, ErrorModel::zero(2), Family::Binary).unwrap();
        let c = naive_glm(&data, IRLS_MAX_ITER).unwrap();
        // Standard errors are about sqrt(1/(n p(1-p) var(w))) ~ 0.027 for slopes.
        assert!((c.beta0 - (ybar / (1.0 - ybar)).ln()).abs() < 0.05);
        assert!(c.beta.amax() < 0.1);
    }
}
