use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::generate::{standard_normals, GpSampler};
use crate::condscore::{naive_glm, Family, IRLS_MAX_ITER, RegressionData};
use crate::covariance::{CovKernel, ErrorModel};
use crate::error::{Error, Result};
use crate::fda::{l2_error, project_scores, reconstruct_function, Curve, CurveSet};
use crate::pipeline::{fit_surrogate, PipelineConfig, PipelineFit};

#[derive(Debug, Clone)]
pub struct InjectReport {
    pub p_n: usize,
    pub e_n: f64,
    pub e_co: f64,
    /// Naive fit on the clean curves in the working basis.
    pub reference: Curve,
    pub naive: Curve,
    pub corrected: Curve,
    pub fit: PipelineFit,
}

/// Contaminates clean curves with Gaussian-process error, estimates the
/// error kernel from `reps_per_subject` fresh replicates per subject, and
/// compares naive and corrected slopes against the slope fitted to the
/// clean curves at the same truncation.
pub fn inject_and_fit<R: Rng + ?Sized>(
    clean: &CurveSet,
    y: &DVector<f64>,
    kernel: &CovKernel,
    reps_per_subject: usize,
    cfg: &PipelineConfig,
    rng: &mut R,
) -> Result<InjectReport> {
    if cfg.family != Family::Gaussian {
        return Err(Error::InvalidArgument("the injection protocol uses a gaussian response".into()));
    }
    if y.len() != clean.len() {
        return Err(Error::Dimension(format!(
            "{} responses for {} clean curves",
            y.len(),
            clean.len()
        )));
    }
    if reps_per_subject < 2 {
        return Err(Error::Replicates(format!(
            "reps_per_subject must be at least 2, got {reps_per_subject}"
        )));
    }
    clean.grid().ensure_same(kernel.grid(), "clean curves and injection kernel")?;
    let sampler = GpSampler::new(kernel)?;
    let (n, m) = (clean.len(), clean.grid().len());

    let u = sampler.sample(n, rng);
    let w = CurveSet::new(clean.grid().clone(), clean.values() + u.values())?;
    let mut scatter = DMatrix::<f64>::zeros(m, m);
    for _ in 0..n {
        let mut z = standard_normals(reps_per_subject, m, rng);
        let rows = reps_per_subject as f64;
        for mut col in z.column_iter_mut() {
            let mean = col.sum() / rows;
            col.add_scalar_mut(-mean);
        }
        scatter.gemm_tr(1.0, &z, &z, 1.0);
    }
    let l = sampler.factor();
    let dof = (n * (reps_per_subject - 1)) as f64;
    let khat = CovKernel::new(clean.grid().clone(), l * scatter * l.transpose() / dof)?;

    let fit = fit_surrogate(&w, &khat, y, None, cfg)?;
    let working = fit.basis.basis().truncate(fit.p_n)?;
    let clean_scores = project_scores(clean, &working, fit.p_n)?;
    let clean_data = RegressionData::new(clean_scores, y.clone(), ErrorModel::zero(fit.p_n), Family::Gaussian)?;
    let reference_coef = naive_glm(&clean_data, IRLS_MAX_ITER)?;
    let reference = reconstruct_function(reference_coef.beta.as_slice(), &working)?;

    let naive = fit.naive_slope.clone();
    let corrected = fit.fit.slope.clone();
    Ok(InjectReport {
        p_n: fit.p_n,
        e_n: l2_error(&reference, &naive)?,
        e_co: l2_error(&reference, &corrected)?,
        reference,
        naive,
        corrected,
        fit,
    })
}
