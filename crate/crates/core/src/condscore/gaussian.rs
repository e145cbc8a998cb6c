use nalgebra::{DMatrix, DVector};

use super::glm::{naive_glm, IRLS_MAX_ITER};
use super::newton::newton_solve;
use super::{slope_curve, AugmentedCoef, Family, FitResult, NewtonConfig, RegressionData};
use crate::error::{Error, Result};
use crate::fda::Basis;

pub const DEFAULT_OUTER_MAX: usize = 50;
const SIGMA2_TOL: f64 = 1e-8;
/// `σ²` below this fraction of the naive residual variance counts as collapsed.
const SIGMA2_COLLAPSE: f64 = 1e-6;
const CENTERING_TOL: f64 = 1e-8;

/// Which form of the Gaussian slope equation to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GaussianEquation {
    /// `U(β) = Σ W_i^c r_i + Ωβ Σ r_i² / (1 + β'Ωβ)` with
    /// `r_i = Y_i^c - W_i^c'β`: the slope equation left after eliminating
    /// `β_0` from the conditional-score system. Unbiased at the truth.
    #[default]
    Conditional,
    /// The polynomial form
    /// `U(β) = -Σ W^c Y^c β'Ωβ + Σ (Y^c)² Ωβ - Σ W^c W^c' β + Σ W^c Y^c`.
    /// Kept for comparison; it is not mean-zero at the truth unless
    /// `Σ W^c W^c' β` is parallel to `Ωβ`.
    Printed,
}

impl std::str::FromStr for GaussianEquation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "conditional" => Ok(GaussianEquation::Conditional),
            "printed" => Ok(GaussianEquation::Printed),
            other => Err(format!("unknown gaussian equation '{other}' (expected conditional or printed)")),
        }
    }
}

/// Cross-products of centered data.
struct Moments {
    swy: DVector<f64>,
    sww: DMatrix<f64>,
    syy: f64,
    omega: DVector<f64>,
}

impl Moments {
    fn new(data: &RegressionData) -> Self {
        let w = data.scores().matrix();
        let y = data.response();
        Moments {
            swy: w.transpose() * y,
            sww: w.transpose() * w,
            syy: y.norm_squared(),
            omega: data.error_model().omega_diag(),
        }
    }

    fn score(&self, eq: GaussianEquation, beta: &DVector<f64>) -> DVector<f64> {
        let omega_b = self.omega.component_mul(beta);
        let kappa = beta.dot(&omega_b);
        let cross = &self.swy - &self.sww * beta;
        match eq {
            GaussianEquation::Conditional => {
                let ssr = self.syy - 2.0 * beta.dot(&self.swy) + beta.dot(&(&self.sww * beta));
                cross + omega_b * (ssr / (1.0 + kappa))
            }
            GaussianEquation::Printed => cross - &self.swy * kappa + omega_b * self.syy,
        }
    }

    fn jacobian(&self, eq: GaussianEquation, beta: &DVector<f64>) -> DMatrix<f64> {
        let omega_b = self.omega.component_mul(beta);
        let omega = DMatrix::from_diagonal(&self.omega);
        match eq {
            GaussianEquation::Conditional => {
                let kappa = beta.dot(&omega_b);
                let cross = &self.swy - &self.sww * beta;
                let ssr = self.syy - 2.0 * beta.dot(&self.swy) + beta.dot(&(&self.sww * beta));
                let grad = cross * (-2.0 / (1.0 + kappa)) - &omega_b * (2.0 * ssr / (1.0 + kappa).powi(2));
                -&self.sww + omega * (ssr / (1.0 + kappa)) + &omega_b * grad.transpose()
            }
            GaussianEquation::Printed => {
                -&self.sww + omega * self.syy - (&self.swy * omega_b.transpose()) * 2.0
            }
        }
    }
}

fn check_gaussian(beta: &DVector<f64>, data: &RegressionData) -> Result<()> {
    if data.family() != Family::Gaussian {
        return Err(Error::InvalidArgument("Gaussian score needs a gaussian family".into()));
    }
    if beta.len() != data.p() {
        return Err(Error::Dimension(format!(
            "beta has {} entries, expected {}",
            beta.len(),
            data.p()
        )));
    }
    let scale = data
        .scores()
        .matrix()
        .amax()
        .max(data.response().amax())
        .max(1.0);
    let worst_col = data.scores().column_means().amax();
    let y_mean = data.response().mean().abs();
    if worst_col > CENTERING_TOL * scale || y_mean > CENTERING_TOL * scale {
        return Err(Error::NotCentered(format!(
            "largest score column mean {worst_col:.3e}, response mean {y_mean:.3e}"
        )));
    }
    Ok(())
}

/// Gaussian slope equation ([`GaussianEquation::Conditional`]) on centered data.
pub fn gaussian_score(beta: &DVector<f64>, data: &RegressionData) -> Result<DVector<f64>> {
    gaussian_score_with(GaussianEquation::default(), beta, data)
}

pub fn gaussian_score_with(
    eq: GaussianEquation,
    beta: &DVector<f64>,
    data: &RegressionData,
) -> Result<DVector<f64>> {
    check_gaussian(beta, data)?;
    Ok(Moments::new(data).score(eq, beta))
}

/// `∂U/∂β` of [`gaussian_score`].
pub fn gaussian_jacobian(beta: &DVector<f64>, data: &RegressionData) -> Result<DMatrix<f64>> {
    gaussian_jacobian_with(GaussianEquation::default(), beta, data)
}

pub fn gaussian_jacobian_with(
    eq: GaussianEquation,
    beta: &DVector<f64>,
    data: &RegressionData,
) -> Result<DMatrix<f64>> {
    check_gaussian(beta, data)?;
    Ok(Moments::new(data).jacobian(eq, beta))
}

/// Corrected Gaussian fit with the conditional slope equation.
pub fn fit_gaussian(
    data: &RegressionData,
    basis: &Basis,
    cfg: &NewtonConfig,
    outer_max: usize,
) -> Result<FitResult> {
    fit_gaussian_with(data, basis, cfg, outer_max, GaussianEquation::default())
}

/// Corrected Gaussian fit.
///
/// `σ²` starts at the naive residual variance `(1/n) Σ r_i²`. Each round
/// sets `Ω = Ω₁/σ²`, solves the slope equation by Newton from the current
/// slope, takes `β_0 = Ȳ - β'W̄` and updates
/// `σ² = (1 + β'Ωβ)/n Σ (Y_i - μ_i)²`, `μ_i = (β_0 + β'δ_i)/(1 + β'Ωβ)`,
/// until `σ²` moves less than 1e-8, with Aitken extrapolation every
/// second round. The returned slope solves the equation at the returned `σ²`.
pub fn fit_gaussian_with(
    data: &RegressionData,
    basis: &Basis,
    cfg: &NewtonConfig,
    outer_max: usize,
    eq: GaussianEquation,
) -> Result<FitResult> {
    if data.family() != Family::Gaussian {
        return Err(Error::InvalidArgument("fit_gaussian needs a gaussian family".into()));
    }
    let n = data.n();
    let (centered, w_mean, y_mean) = data.centered()?;
    let naive = naive_glm(data, IRLS_MAX_ITER)?;
    let omega1 = data.error_model().omega1().clone();
    let error_free = omega1.iter().all(|l| *l == 0.0);

    let resid = centered.response() - centered.scores().matrix() * &naive.beta;
    let mut sigma2 = resid.norm_squared() / n as f64;
    let naive_sigma2 = sigma2;
    if !(sigma2 > 0.0) && !error_free {
        return Err(Error::Estimation(
            "naive residual variance is zero; cannot scale the error covariance".into(),
        ));
    }

    let base = centered.error_model().clone();
    let solve_at = |sigma2: f64, init: &DVector<f64>| {
        let scale = if sigma2 > 0.0 { sigma2 } else { 1.0 };
        let moments = Moments {
            omega: base.with_scale(scale)?.omega_diag(),
            ..Moments::new(&centered)
        };
        newton_solve(
            |b| moments.score(eq, b),
            |b| moments.jacobian(eq, b),
            init.clone(),
            n,
            cfg,
        )
    };
    let update_sigma2 = |beta: &DVector<f64>, sigma2: f64| -> Result<f64> {
        let omega = if sigma2 > 0.0 { &omega1 / sigma2 } else { DVector::zeros(omega1.len()) };
        let omega_b = omega.component_mul(beta);
        let kappa = beta.dot(&omega_b);
        let beta0 = y_mean - beta.dot(&w_mean);
        let mut ss = 0.0;
        for (i, &y) in data.response().iter().enumerate() {
            let w = data.scores().row(i);
            let delta = w + &omega_b * y;
            let mu = (beta0 + beta.dot(&delta)) / (1.0 + kappa);
            ss += (y - mu).powi(2);
        }
        let next = (1.0 + kappa) * ss / n as f64;
        if !next.is_finite() || next < 0.0 || (next == 0.0 && !error_free) {
            return Err(Error::Estimation(format!("sigma^2 update is not positive ({next:e})")));
        }
        Ok(next)
    };

    let mut beta = naive.beta.clone();
    let mut iterations = 0;
    let mut outer_converged = false;
    let mut recent = vec![sigma2];
    for _ in 0..outer_max.max(1) {
        let out = solve_at(sigma2, &beta)?;
        iterations += out.iterations;
        beta = out.root;
        let next = update_sigma2(&beta, sigma2)?;
        let moved = (next - sigma2).abs();
        sigma2 = next;
        if moved < SIGMA2_TOL {
            outer_converged = true;
            break;
        }
        // Aitken extrapolation over three plain iterates.
        recent.push(next);
        if recent.len() == 3 {
            let (a, b, c) = (recent[0], recent[1], recent[2]);
            let denom = c - 2.0 * b + a;
            let jump = a - (b - a).powi(2) / denom;
            if denom != 0.0 && jump.is_finite() && jump > 0.0 {
                sigma2 = jump;
            }
            recent = vec![sigma2];
        }
    }
    if !error_free && sigma2 < SIGMA2_COLLAPSE * naive_sigma2 {
        return Err(Error::Estimation(format!(
            "error variance estimate collapsed to {sigma2:.3e} (naive {naive_sigma2:.3e}); \
             the score error covariance exceeds the residual variance"
        )));
    }
    let last = solve_at(sigma2, &beta)?;
    iterations += last.iterations;
    let beta = last.root;

    let beta0 = y_mean - beta.dot(&w_mean);
    let coef = AugmentedCoef::new(beta0, beta);
    let slope = slope_curve(&coef.beta, basis)?;
    Ok(FitResult {
        coef,
        sigma2: Some(sigma2),
        slope,
        converged: outer_converged && last.converged,
        iterations,
        final_residual: last.final_residual,
        initial: naive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::ErrorModel;
    use crate::fda::{fourier_basis, Grid, ScoreMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn centered_data(seed: u64, n: usize, p: usize, omega: Vec<f64>) -> RegressionData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal) * 1.5);
        let y = DVector::from_fn(n, |i, _| {
            w.row(i).iter().enumerate().map(|(k, v)| v / (k + 1) as f64).sum::<f64>()
                + rng.sample::<f64, _>(StandardNormal)
        });
        let raw = RegressionData::new(
            ScoreMatrix(w),
            y,
            ErrorModel::new(DVector::from_vec(omega), 1.0).unwrap(),
            Family::Gaussian,
        )
        .unwrap();
        raw.centered().unwrap().0
    }

    #[test]
    fn zero_error_is_ols_residual() {
        let data = centered_data(3, 30, 3, vec![0.0; 3]);
        let beta = DVector::from_vec(vec![0.3, -0.2, 0.9]);
        let w = data.scores().matrix();
        let expected = w.transpose() * data.response() - w.transpose() * w * &beta;
        for eq in [GaussianEquation::Conditional, GaussianEquation::Printed] {
            let u = gaussian_score_with(eq, &beta, &data).unwrap();
            assert!((u - &expected).amax() < 1e-10);
            let j = gaussian_jacobian_with(eq, &beta, &data).unwrap();
            assert!((j + w.transpose() * w).amax() < 1e-10);
        }
    }

    #[test]
    fn zero_beta_gives_cross_product() {
        let data = centered_data(4, 30, 2, vec![0.5, 0.2]);
        let u = gaussian_score(&DVector::zeros(2), &data).unwrap();
        let expected = data.scores().matrix().transpose() * data.response();
        assert!((u - expected).amax() < 1e-12);
    }

    #[test]
    fn uncentered_data_is_rejected() {
        let w = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, -1.0, 0.0]);
        let data = RegressionData::new(ScoreMatrix(w), y, ErrorModel::zero(1), Family::Gaussian).unwrap();
        assert!(matches!(
            gaussian_score(&DVector::zeros(1), &data),
            Err(Error::NotCentered(_))
        ));
    }

    #[test]
    fn printed_form_hand_case() {
        // W^c = (1, -1), Y^c = (1, -1), Omega = 1: U(b) = 2(-b^2 + b - b + 1), dU/db = -4b.
        let w = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        let em = ErrorModel::new(DVector::from_element(1, 1.0), 1.0).unwrap();
        let data = RegressionData::new(ScoreMatrix(w), y, em, Family::Gaussian).unwrap();
        let b = DVector::from_element(1, 1.0);
        let u = gaussian_score_with(GaussianEquation::Printed, &b, &data).unwrap();
        assert!((u[0] - 0.0).abs() < 1e-15);
        let j = gaussian_jacobian_with(GaussianEquation::Printed, &b, &data).unwrap();
        assert!((j[(0, 0)] + 4.0).abs() < 1e-15);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        for seed in 0..10 {
            let data = centered_data(50 + seed, 25, 3, vec![0.4, 0.25, 0.1]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            for eq in [GaussianEquation::Conditional, GaussianEquation::Printed] {
                let j = gaussian_jacobian_with(eq, &b, &data).unwrap();
                let h = 1e-6;
                for c in 0..3 {
                    let mut up = b.clone();
                    let mut dn = b.clone();
                    up[c] += h;
                    dn[c] -= h;
                    let col = (gaussian_score_with(eq, &up, &data).unwrap()
                        - gaussian_score_with(eq, &dn, &data).unwrap())
                        / (2.0 * h);
                    let rel = (&col - j.column(c)).amax() / j.amax();
                    assert!(rel < 1e-5, "{eq:?} column {c}: {rel}");
                }
            }
        }
    }

    #[test]
    fn root_agrees_with_grid_search() {
        // Brute-force oracle on p = 2: scan a grid for the smallest ‖U‖∞.
        let data = centered_data(9, 60, 2, vec![0.3, 0.15]);
        let out = newton_solve(
            |b| gaussian_score(b, &data).unwrap(),
            |b| gaussian_jacobian(b, &data).unwrap(),
            naive_glm(&data, 10).unwrap().beta,
            60,
            &NewtonConfig::default(),
        )
        .unwrap();
        assert!(out.converged);
        let step = 0.01;
        let (mut best, mut best_norm) = (DVector::zeros(2), f64::INFINITY);
        for i in 0..=300 {
            for j in 0..=300 {
                let b = DVector::from_vec(vec![-1.0 + step * i as f64, -1.5 + step * j as f64]);
                let norm = gaussian_score(&b, &data).unwrap().amax();
                if norm < best_norm {
                    best_norm = norm;
                    best = b;
                }
            }
        }
        assert!((out.root - best).amax() <= step);
    }

    #[test]
    fn fit_without_error_is_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 80;
        let w = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| 1.0 + w[(i, 0)] - 0.5 * w[(i, 2)] + rng.sample::<f64, _>(StandardNormal));
        let data = RegressionData::new(ScoreMatrix(w), y, ErrorModel::zero(3), Family::Gaussian).unwrap();
        let basis = fourier_basis(3, &Grid::unit(101).unwrap()).unwrap();
        let fit = fit_gaussian(&data, &basis, &NewtonConfig::default(), DEFAULT_OUTER_MAX).unwrap();
        let naive = naive_glm(&data, 10).unwrap();
        assert!((fit.coef.combined() - naive.combined()).amax() < 1e-8);
        let (c, _, _) = data.centered().unwrap();
        let r = c.response() - c.scores().matrix() * &naive.beta;
        assert!((fit.sigma2.unwrap() - r.norm_squared() / n as f64).abs() < 1e-10);
    }

    #[test]
    fn noiseless_data_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = DMatrix::from_fn(20, 2, |_, _| rng.gen_range(-2.0..2.0));
        let y = DVector::from_fn(20, |i, _| 0.5 + 2.0 * w[(i, 0)] - w[(i, 1)]);
        let data = RegressionData::new(ScoreMatrix(w), y, ErrorModel::zero(2), Family::Gaussian).unwrap();
        let basis = fourier_basis(2, &Grid::unit(11).unwrap()).unwrap();
        let fit = fit_gaussian(&data, &basis, &NewtonConfig::default(), DEFAULT_OUTER_MAX).unwrap();
        assert!((fit.coef.beta0 - 0.5).abs() < 1e-8);
        assert!((fit.coef.beta[0] - 2.0).abs() < 1e-8 && (fit.coef.beta[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn overstated_error_covariance_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = DMatrix::from_fn(80, 1, |_, _| rng.gen_range(-2.0..2.0));
        let y = DVector::from_fn(80, |i, _| w[(i, 0)] + rng.gen_range(-0.1..0.1));
        let em = ErrorModel::new(DVector::from_element(1, 0.5), 1.0).unwrap();
        let data = RegressionData::new(ScoreMatrix(w), y, em, Family::Gaussian).unwrap();
        let basis = fourier_basis(1, &Grid::unit(11).unwrap()).unwrap();
        let err = fit_gaussian(&data, &basis, &NewtonConfig::default(), DEFAULT_OUTER_MAX).unwrap_err();
        assert!(err.to_string().contains("collapsed"), "{err}");
    }

    #[test]
    fn fixed_point_is_moment_corrected_least_squares() {
        // Independent route: (Σ W^c W^c' - n Ω₁) β = Σ W^c Y^c.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 2000;
        let omega1 = [0.3f64, 0.2];
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal) * 1.4);
        let w = DMatrix::from_fn(n, 2, |i, k| x[(i, k)] + rng.sample::<f64, _>(StandardNormal) * omega1[k].sqrt());
        let y = DVector::from_fn(n, |i, _| 0.2 + x[(i, 0)] + 0.5 * x[(i, 1)] + rng.sample::<f64, _>(StandardNormal));
        let em = ErrorModel::new(DVector::from_column_slice(&omega1), 1.0).unwrap();
        let data = RegressionData::new(ScoreMatrix(w), y, em, Family::Gaussian).unwrap();
        let basis = fourier_basis(2, &Grid::unit(11).unwrap()).unwrap();
        let fit = fit_gaussian(&data, &basis, &NewtonConfig::default(), DEFAULT_OUTER_MAX).unwrap();
        assert!(fit.converged);

        let (c, means, ybar) = data.centered().unwrap();
        let wc = c.scores().matrix();
        let lhs = wc.transpose() * wc - DMatrix::from_diagonal(&DVector::from_column_slice(&omega1)) * n as f64;
        let mcls = lhs.lu().solve(&(wc.transpose() * c.response())).unwrap();
        assert!((&fit.coef.beta - &mcls).amax() < 1e-6);
        assert_eq!(fit.coef.beta0, ybar - fit.coef.beta.dot(&means));

        let check = data
            .centered()
            .unwrap()
            .0
            .with_error_model(data.error_model().with_scale(fit.sigma2.unwrap()).unwrap())
            .unwrap();
        let u = gaussian_score(&fit.coef.beta, &check).unwrap();
        assert!(u.amax() / n as f64 <= NewtonConfig::default().tol);
    }
}
