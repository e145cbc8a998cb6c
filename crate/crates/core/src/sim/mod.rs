//! Simulation designs, Monte Carlo driver and the error-injection protocol.

mod generate;
mod inject;
mod scenario;

pub use generate::{
    bernoulli_responses, brownian_bridge_kernel, covariate_dimension, generate_covariates,
    generate_covariates_in, generate_responses, generate_slope, generate_slope_in, sample_gp,
    sqexp_kernel, GpSampler, PRounding, COEF_MEAN,
};
pub use inject::{inject_and_fit, InjectReport};
pub use scenario::{
    run_scenario, run_scenario_detailed, simulate_dataset, BinaryLink, CovariateBasis,
    MCResultRow, RepOutcome, ScenarioRun, Setting, SimScenario, SimulatedDataset, SurrogateMode,
};
