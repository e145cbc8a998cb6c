//! Functional regression with a functional covariate observed under
//! measurement error.

pub mod condscore;
pub mod covariance;
pub mod error;
pub mod fda;
pub mod io;
pub mod pipeline;
pub mod sim;

pub use condscore::{
    check_assumptions, fit_binary, fit_gaussian, naive_glm, AugmentedCoef, Family, FitResult,
    NewtonConfig, RegressionData,
};
pub use covariance::{
    build_error_model, eigen_decompose, estimate_error_kernel, select_pn, CovKernel, EigenBasis,
    ErrorModel, ReplicateSet, SelectionConfig,
};
pub use error::{Error, Result};
pub use fda::{fourier_basis, project_scores, Basis, Curve, CurveSet, Grid, ScoreMatrix};
pub use pipeline::{fit_surrogate, PipelineConfig, PipelineFit};
pub use sim::{inject_and_fit, run_scenario, MCResultRow, SimScenario};
