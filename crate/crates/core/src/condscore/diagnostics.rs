use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};

use super::{AugmentedCoef, Family, RegressionData};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flag {
    Pass,
    Warn,
    NotEvaluated,
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flag::Pass => "pass",
            Flag::Warn => "warn",
            Flag::NotEvaluated => "not-evaluated",
        })
    }
}

/// One inequality `lhs <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub flag: Flag,
}

impl AssumptionCheck {
    fn compare(lhs: f64, rhs: f64) -> Self {
        let flag = if lhs.is_finite() && rhs.is_finite() && lhs <= rhs {
            Flag::Pass
        } else {
            Flag::Warn
        };
        AssumptionCheck { lhs, rhs, flag }
    }

    fn skipped() -> Self {
        AssumptionCheck {
            lhs: f64::NAN,
            rhs: f64::NAN,
            flag: Flag::NotEvaluated,
        }
    }
}

/// Numerical checks of the regularity conditions behind the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub family: Family,
    /// Frobenius norm of Ω (bounded-error condition).
    pub omega_norm: f64,
    pub omega_norm_flag: Flag,
    pub lambda_max_omega: f64,
    /// `λ_min(Σ W_ic W_ic' / n)` with `W_ic = (1, W_i')'`.
    pub lambda_min_gram: f64,
    /// `λ_max(Ω) exp(λ_max(Ω) m_1) <= B exp(inf W_c'β - sup W_c'β) / (1 + exp(inf W_c'β))`,
    /// binary family with a coefficient vector supplied.
    pub eigen_condition: AssumptionCheck,
    /// `λ_max(Ω₁) <= λ_min(Σ W^c W^c' / n) + λ_min(Ω₁)`, with the observed
    /// scores standing in for the unobservable true scores (approximate).
    pub variance_condition: AssumptionCheck,
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "family = {}", self.family.as_str())?;
        writeln!(f, "omega_frobenius_norm = {:e} [{}]", self.omega_norm, self.omega_norm_flag)?;
        writeln!(f, "lambda_max_omega = {:e}", self.lambda_max_omega)?;
        writeln!(f, "lambda_min_score_gram = {:e}", self.lambda_min_gram)?;
        writeln!(
            f,
            "eigen_condition = {:e} <= {:e} [{}]",
            self.eigen_condition.lhs, self.eigen_condition.rhs, self.eigen_condition.flag
        )?;
        write!(
            f,
            "variance_condition (approximate, W for X) = {:e} <= {:e} [{}]",
            self.variance_condition.lhs, self.variance_condition.rhs, self.variance_condition.flag
        )
    }
}

fn eigen_range(m: DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let e = SymmetricEigen::new(m).eigenvalues;
    (e.min(), e.max())
}

/// Never fails; conditions that cannot be evaluated are flagged as such.
pub fn check_assumptions(data: &RegressionData, beta_tilde: Option<&AugmentedCoef>) -> AssumptionReport {
    let n = data.n() as f64;
    let omega = data.error_model().omega_diag();
    let omega1 = data.error_model().omega1();
    let omega_norm = omega.norm();
    let lambda_max_omega = omega.iter().cloned().fold(0.0, f64::max);

    let wc = data.augmented_design();
    let (lambda_min_gram, _) = eigen_range(wc.transpose() * &wc / n);

    let eigen_condition = match (data.family(), beta_tilde) {
        (Family::Binary, Some(b)) if b.beta.len() == data.p() => {
            let m1 = b.beta.norm();
            let lin = &wc * b.combined();
            let (inf, sup) = (lin.min(), lin.max());
            let lhs = lambda_max_omega * (lambda_max_omega * m1).exp();
            let rhs = lambda_min_gram * (inf - sup).exp() / (1.0 + inf.exp());
            AssumptionCheck::compare(lhs, rhs)
        }
        _ => AssumptionCheck::skipped(),
    };

    let variance_condition = match data.centered() {
        Ok((c, _, _)) => {
            let w = c.scores().matrix();
            let (min_cov, _) = eigen_range(w.transpose() * w / n);
            let max1 = omega1.iter().cloned().fold(0.0, f64::max);
            let min1 = omega1.iter().cloned().fold(f64::INFINITY, f64::min);
            let min1 = if min1.is_finite() { min1 } else { 0.0 };
            AssumptionCheck::compare(max1, min_cov + min1)
        }
        Err(_) => AssumptionCheck::skipped(),
    };

    AssumptionReport {
        family: data.family(),
        omega_norm,
        omega_norm_flag: if omega_norm.is_finite() { Flag::Pass } else { Flag::Warn },
        lambda_max_omega,
        lambda_min_gram,
        eigen_condition,
        variance_condition,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::ErrorModel;
    use crate::fda::ScoreMatrix;
    use nalgebra::DVector;

    fn data(omega: [f64; 2]) -> RegressionData {
        let w = DMatrix::from_row_slice(4, 2, &[-1.0, 0.2, -0.5, -0.4, 0.5, 0.3, 1.0, -0.1]);
        let y = DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0]);
        let em = ErrorModel::new(DVector::from_column_slice(&omega), 1.0).unwrap();
        RegressionData::new(ScoreMatrix(w), y, em, Family::Binary).unwrap()
    }

    #[test]
    fn zero_error_passes() {
        let b = AugmentedCoef::new(0.1, DVector::from_vec(vec![0.5, -0.2]));
        let r = check_assumptions(&data([0.0, 0.0]), Some(&b));
        assert_eq!(r.eigen_condition.lhs, 0.0);
        assert_eq!(r.eigen_condition.flag, Flag::Pass);
        assert_eq!(r.omega_norm_flag, Flag::Pass);
    }

    #[test]
    fn large_error_warns() {
        let b = AugmentedCoef::new(0.1, DVector::from_vec(vec![0.5, -0.2]));
        let r = check_assumptions(&data([50.0, 0.01]), Some(&b));
        assert_eq!(r.eigen_condition.flag, Flag::Warn);
        assert_eq!(r.variance_condition.flag, Flag::Warn);
        assert!(r.to_string().contains("warn"));
    }

    #[test]
    fn missing_coefficients_are_not_evaluated() {
        let r = check_assumptions(&data([0.1, 0.1]), None);
        assert_eq!(r.eigen_condition.flag, Flag::NotEvaluated);
        assert!(r.lambda_min_gram > 0.0);
    }
}
