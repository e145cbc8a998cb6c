//! End-to-end estimation from surrogate curves and an error kernel.

use nalgebra::DVector;

use crate::condscore::{
    check_assumptions, fit_binary, fit_gaussian_with, AssumptionReport, Family, FitResult,
    GaussianEquation, NewtonConfig, RegressionData, DEFAULT_OUTER_MAX,
};
use crate::covariance::{
    build_error_model, eigen_decompose, pick_elbow, variance_explained, CovKernel, EigenBasis,
    SelectionConfig,
};
use crate::error::{Error, Result};
use crate::fda::{fourier_basis, project_scores, reconstruct_function, Curve, CurveSet};

/// Everything the estimation pipeline needs besides data.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub family: Family,
    pub selection: SelectionConfig,
    /// Overrides the variance-explained rule when set.
    pub fixed_pn: Option<usize>,
    pub solver: NewtonConfig,
    pub outer_max: usize,
    pub gaussian_equation: GaussianEquation,
}

impl PipelineConfig {
    pub fn new(family: Family) -> Self {
        PipelineConfig {
            family,
            selection: SelectionConfig::default(),
            fixed_pn: None,
            solver: NewtonConfig::default(),
            outer_max: DEFAULT_OUTER_MAX,
            gaussian_equation: GaussianEquation::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.selection.epsilon > 0.0 && self.selection.epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in (0, 1), got {}",
                self.selection.epsilon
            )));
        }
        if self.selection.cap == 0 {
            return Err(Error::InvalidArgument("cap must be at least 1".into()));
        }
        if self.fixed_pn == Some(0) {
            return Err(Error::InvalidArgument("p_n must be at least 1".into()));
        }
        if self.outer_max == 0 {
            return Err(Error::InvalidArgument("outer_max must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineFit {
    /// Working basis: error eigenfunctions, or Fourier functions with zero
    /// eigenvalues when the kernel has no positive spectrum.
    pub basis: EigenBasis,
    pub fourier_fallback: bool,
    pub variance_explained: Vec<f64>,
    pub p_n: usize,
    pub data: RegressionData,
    pub fit: FitResult,
    pub naive_slope: Curve,
    pub diagnostics: AssumptionReport,
}

/// Error eigenbasis with up to `count` components, or a Fourier basis with
/// zero eigenvalues if the kernel is (numerically) zero.
pub fn working_basis(kernel: &CovKernel, count: usize) -> Result<(EigenBasis, bool)> {
    let basis = eigen_decompose(kernel, count)?;
    if !basis.is_empty() {
        return Ok((basis, false));
    }
    let fourier = fourier_basis(count, kernel.grid())?;
    Ok((EigenBasis::new(fourier, vec![0.0; count])?, true))
}

/// Selects `p_n`, projects the surrogates, and fits naive and corrected
/// models. `replicates_averaged = Some(m)` divides the score error variance
/// by `m` for surrogates that are means of `m` replicates.
pub fn fit_surrogate(
    surrogate: &CurveSet,
    kernel: &CovKernel,
    response: &DVector<f64>,
    replicates_averaged: Option<usize>,
    cfg: &PipelineConfig,
) -> Result<PipelineFit> {
    cfg.validate()?;
    surrogate.grid().ensure_same(kernel.grid(), "surrogate curves and error kernel")?;
    let n = surrogate.len();
    if response.len() != n {
        return Err(Error::Dimension(format!(
            "{} responses for {n} curves",
            response.len()
        )));
    }
    let cap = cfg.selection.effective_cap(n, surrogate.grid().len(), usize::MAX);
    if cap == 0 {
        return Err(Error::InvalidArgument("too few curves or grid points to select p_n".into()));
    }
    let count = cap.max(cfg.fixed_pn.unwrap_or(0));
    let (basis, fourier_fallback) = working_basis(kernel, count)?;

    let cumulative = variance_explained(surrogate, &basis, cap, cfg.selection.source)?;
    let p_n = match cfg.fixed_pn {
        Some(p) if p > basis.len() => {
            return Err(Error::InvalidArgument(format!(
                "p_n = {p} exceeds the {} available components",
                basis.len()
            )))
        }
        Some(p) => p,
        None => pick_elbow(&cumulative, cfg.selection.epsilon),
    };

    let scores = project_scores(surrogate, basis.basis(), p_n)?;
    let mut error_model = build_error_model(&basis, p_n, 1.0)?;
    if let Some(m) = replicates_averaged {
        error_model = error_model.averaged_over(m)?;
    }
    let data = RegressionData::new(scores, response.clone(), error_model, cfg.family)?;
    let working = basis.basis().truncate(p_n)?;
    let fit = match cfg.family {
        Family::Gaussian => {
            fit_gaussian_with(&data, &working, &cfg.solver, cfg.outer_max, cfg.gaussian_equation)?
        }
        Family::Binary => fit_binary(&data, &working, &cfg.solver)?,
    };
    let naive_slope = reconstruct_function(fit.initial.beta.as_slice(), &working)?;
    let diagnostics = check_assumptions(&data, Some(&fit.coef));
    Ok(PipelineFit {
        basis,
        fourier_fallback,
        variance_explained: cumulative,
        p_n,
        data,
        fit,
        naive_slope,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fda::Grid;
    use nalgebra::DMatrix;

    #[test]
    fn zero_kernel_falls_back_to_fourier() {
        let grid = Grid::unit(51).unwrap();
        let (basis, fallback) = working_basis(&CovKernel::zeros(&grid), 5).unwrap();
        assert!(fallback);
        assert_eq!(basis.len(), 5);
        assert!(basis.eigenvalues().iter().all(|l| *l == 0.0));
    }

    #[test]
    fn zero_kernel_fit_is_naive() {
        let grid = Grid::unit(51).unwrap();
        let n = 40;
        let values = DMatrix::from_fn(n, 51, |i, j| {
            let t = grid.points()[j];
            (i as f64 * 0.37).sin() + (i as f64 * 0.11).cos() * t + ((i * i) as f64 * 0.05).sin() * t * t
        });
        let curves = CurveSet::new(grid.clone(), values).unwrap();
        let y = DVector::from_fn(n, |i, _| (i as f64 * 0.7).sin());
        let mut cfg = PipelineConfig::new(Family::Gaussian);
        cfg.fixed_pn = Some(3);
        let out = fit_surrogate(&curves, &CovKernel::zeros(&grid), &y, None, &cfg).unwrap();
        assert!(out.fourier_fallback);
        assert!((out.fit.coef.combined() - out.fit.initial.combined()).amax() < 1e-8);
    }
}
