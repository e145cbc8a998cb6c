use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::generate::{
    bernoulli_responses, brownian_bridge_kernel, covariate_dimension, generate_covariates_in,
    generate_responses, generate_slope_in, sqexp_kernel, standard_normals, GpSampler, PRounding,
    COEF_MEAN,
};
use crate::condscore::{Family, GaussianEquation, NewtonConfig, DEFAULT_OUTER_MAX};
use crate::covariance::{eigen_decompose, CovKernel, ReplicateSet, SelectionConfig};
use crate::error::{Error, Result};
use crate::fda::{fourier_basis, l2_error, Basis, Curve, CurveSet, Grid};
use crate::pipeline::{fit_surrogate, PipelineConfig, PipelineFit};

/// Error covariance of the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    SqExp,
    BrownianBridge,
}

impl Setting {
    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::SqExp => "sqexp",
            Setting::BrownianBridge => "brownian_bridge",
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sqexp" => Ok(Setting::SqExp),
            "brownian_bridge" => Ok(Setting::BrownianBridge),
            other => Err(format!("unknown setting '{other}' (expected sqexp or brownian_bridge)")),
        }
    }
}

/// Basis the true covariates and slope are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovariateBasis {
    /// Leading eigenfunctions of the true error kernel.
    #[default]
    KernelEigen,
    Fourier,
}

impl std::str::FromStr for CovariateBasis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "kernel_eigen" => Ok(CovariateBasis::KernelEigen),
            "fourier" => Ok(CovariateBasis::Fourier),
            other => Err(format!("unknown covariate basis '{other}' (expected kernel_eigen or fourier)")),
        }
    }
}

/// Binary response generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BinaryLink {
    /// `P(Y = 1) = F(max_t X(t))`.
    #[default]
    MaxLogistic,
    /// `P(Y = 1) = F(∫(X - E X) β̃)`, a correctly specified logistic model.
    LinearLogistic,
}

impl std::str::FromStr for BinaryLink {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "max_logistic" => Ok(BinaryLink::MaxLogistic),
            "linear_logistic" => Ok(BinaryLink::LinearLogistic),
            other => Err(format!(
                "unknown binary link '{other}' (expected max_logistic or linear_logistic)"
            )),
        }
    }
}

/// What the regression sees as the contaminated covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SurrogateMode {
    /// `W = X + U` with `U` independent of the covariance replicates.
    #[default]
    Independent,
    /// `W` is the mean of the replicates; score error variance is divided by
    /// the replicate count.
    ReplicateMean,
}

impl std::str::FromStr for SurrogateMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "independent" => Ok(SurrogateMode::Independent),
            "replicate_mean" => Ok(SurrogateMode::ReplicateMean),
            other => Err(format!(
                "unknown surrogate mode '{other}' (expected independent or replicate_mean)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub family: Family,
    pub setting: Setting,
    pub n: usize,
    /// `σ₁` for sqexp, `σ₂` for the Brownian bridge.
    pub noise: f64,
    /// Only used by sqexp.
    pub length_scale: f64,
    pub reps: usize,
    pub replicates_per_subject: usize,
    pub grid_size: usize,
    pub seed: u64,
    pub covariate_basis: CovariateBasis,
    pub p_rounding: PRounding,
    pub binary_link: BinaryLink,
    pub surrogate: SurrogateMode,
    /// Overrides `p = 2 n^{1/5}`.
    pub fixed_p: Option<usize>,
    pub fixed_pn: Option<usize>,
    pub selection: SelectionConfig,
    pub solver: NewtonConfig,
    pub outer_max: usize,
    pub gaussian_equation: GaussianEquation,
}

impl SimScenario {
    pub fn new(family: Family, setting: Setting, n: usize, noise: f64, length_scale: f64) -> Self {
        SimScenario {
            family,
            setting,
            n,
            noise,
            length_scale,
            reps: 50,
            replicates_per_subject: 50,
            grid_size: 101,
            seed: 1,
            covariate_basis: CovariateBasis::default(),
            p_rounding: PRounding::default(),
            binary_link: BinaryLink::default(),
            surrogate: SurrogateMode::default(),
            fixed_p: None,
            fixed_pn: None,
            selection: SelectionConfig::default(),
            solver: NewtonConfig::default(),
            outer_max: DEFAULT_OUTER_MAX,
            gaussian_equation: GaussianEquation::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n < 50 {
            return bad(format!("n must be at least 50, got {}", self.n));
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be > 0, got {}", self.noise));
        }
        if self.setting == Setting::SqExp && !(self.length_scale > 0.0 && self.length_scale < 1.0) {
            return bad(format!("length_scale must lie in (0, 1), got {}", self.length_scale));
        }
        if self.replicates_per_subject < 2 {
            return bad(format!(
                "replicates_per_subject must be at least 2, got {}",
                self.replicates_per_subject
            ));
        }
        if self.grid_size < 3 {
            return bad(format!("grid_size must be at least 3, got {}", self.grid_size));
        }
        if self.fixed_p == Some(0) {
            return bad("p must be at least 1".into());
        }
        self.pipeline_config().validate()
    }

    /// Stable label, e.g. `gaussian-sqexp-n1000-noise5-l0.05`.
    pub fn scenario_id(&self) -> String {
        let mut id = format!(
            "{}-{}-n{}-noise{}",
            self.family.as_str(),
            self.setting.as_str(),
            self.n,
            self.noise
        );
        if self.setting == Setting::SqExp {
            id.push_str(&format!("-l{}", self.length_scale));
        }
        id
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::unit(self.grid_size)
    }

    pub fn kernel(&self, grid: &Grid) -> Result<CovKernel> {
        match self.setting {
            Setting::SqExp => sqexp_kernel(self.noise, self.length_scale, grid),
            Setting::BrownianBridge => brownian_bridge_kernel(self.noise, grid),
        }
    }

    /// Number of true covariate components.
    pub fn p(&self) -> usize {
        self.fixed_p.unwrap_or_else(|| covariate_dimension(self.n, self.p_rounding))
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            family: self.family,
            selection: self.selection,
            fixed_pn: self.fixed_pn,
            solver: self.solver,
            outer_max: self.outer_max,
            gaussian_equation: self.gaussian_equation,
        }
    }

    /// Random stream for one replication.
    pub fn rep_rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep as u64);
        rng
    }
}

/// Per-scenario quantities shared by all replications.
struct Prepared {
    grid: Grid,
    sampler: GpSampler,
    covariate_basis: Basis,
    slope: Curve,
    slope_coefs: DVector<f64>,
}

impl Prepared {
    fn new(s: &SimScenario) -> Result<Self> {
        s.validate()?;
        let grid = s.grid()?;
        let kernel = s.kernel(&grid)?;
        let sampler = GpSampler::new(&kernel)?;
        let p = s.p();
        let covariate_basis = match s.covariate_basis {
            CovariateBasis::Fourier => fourier_basis(p, &grid)?,
            CovariateBasis::KernelEigen => {
                let eig = eigen_decompose(&kernel, p)?;
                if eig.len() < p {
                    return Err(Error::InvalidArgument(format!(
                        "error kernel has only {} usable eigenfunctions for p = {p}",
                        eig.len()
                    )));
                }
                eig.basis().clone()
            }
        };
        let (slope, slope_coefs) = generate_slope_in(&covariate_basis)?;
        Ok(Prepared {
            grid,
            sampler,
            covariate_basis,
            slope,
            slope_coefs,
        })
    }
}

/// One replication's draws. The replicate normals are handed to `sink`
/// subject by subject, in order, as `R x m` matrices.
struct Draw {
    x: CurveSet,
    u: Option<DMatrix<f64>>,
    y: DVector<f64>,
}

fn draw<R: Rng + ?Sized>(
    s: &SimScenario,
    prep: &Prepared,
    rng: &mut R,
    mut sink: impl FnMut(usize, DMatrix<f64>),
) -> Result<Draw> {
    let m = prep.grid.len();
    let (x, coefs) = generate_covariates_in(&prep.covariate_basis, s.n, rng)?;
    let u = match s.surrogate {
        SurrogateMode::Independent => Some(prep.sampler.color(&standard_normals(s.n, m, rng))),
        SurrogateMode::ReplicateMean => None,
    };
    let y = match (s.family, s.binary_link) {
        (Family::Binary, BinaryLink::LinearLogistic) => {
            let eta = coefs.add_scalar(-COEF_MEAN) * &prep.slope_coefs;
            bernoulli_responses(&eta, rng)
        }
        _ => generate_responses(&x, &prep.slope, s.family, rng)?,
    };
    for i in 0..s.n {
        sink(i, standard_normals(s.replicates_per_subject, m, rng));
    }
    Ok(Draw { x, u, y })
}

fn center_columns(z: &mut DMatrix<f64>) -> DVector<f64> {
    let rows = z.nrows() as f64;
    let mut means = DVector::zeros(z.ncols());
    for (j, mut col) in z.column_iter_mut().enumerate() {
        let mean = col.sum() / rows;
        col.add_scalar_mut(-mean);
        means[j] = mean;
    }
    means
}

/// Surrogates, responses and the pooled replicate kernel, without
/// materializing the replicate curves: with replicates `X_i + L z_il`,
/// the pooled kernel is `L (Σ_i Z_ic' Z_ic) L' / Σ(m_i - 1)`.
fn draw_for_fit<R: Rng + ?Sized>(
    s: &SimScenario,
    prep: &Prepared,
    rng: &mut R,
) -> Result<(CurveSet, CovKernel, DVector<f64>)> {
    let m = prep.grid.len();
    let mut scatter = DMatrix::<f64>::zeros(m, m);
    let mut rep_means = match s.surrogate {
        SurrogateMode::ReplicateMean => Some(DMatrix::<f64>::zeros(s.n, m)),
        SurrogateMode::Independent => None,
    };
    let d = draw(s, prep, rng, |i, mut z| {
        let means = center_columns(&mut z);
        scatter.gemm_tr(1.0, &z, &z, 1.0);
        if let Some(rm) = rep_means.as_mut() {
            rm.row_mut(i).tr_copy_from(&means);
        }
    })?;
    let dof = (s.n * (s.replicates_per_subject - 1)) as f64;
    let l = prep.sampler.factor();
    let khat = l * scatter * l.transpose() / dof;
    let kernel = CovKernel::new(prep.grid.clone(), khat)?;
    let noise = match (d.u, rep_means) {
        (Some(u), _) => u,
        (None, Some(zbar)) => prep.sampler.color(&zbar),
        (None, None) => unreachable!("one surrogate source is always drawn"),
    };
    let w = CurveSet::new(prep.grid.clone(), d.x.values() + noise)?;
    Ok((w, kernel, d.y))
}

/// A fully materialized simulated dataset.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub x: CurveSet,
    /// The independent error curves; `None` in replicate-mean mode.
    pub u: Option<CurveSet>,
    pub w: CurveSet,
    pub y: DVector<f64>,
    pub replicates: ReplicateSet,
    pub true_slope: Curve,
    pub slope_coefs: DVector<f64>,
}

/// Replication `rep` of the scenario with every replicate curve stored.
/// Uses the same random stream as [`run_scenario`].
pub fn simulate_dataset(s: &SimScenario, rep: usize) -> Result<SimulatedDataset> {
    let prep = Prepared::new(s)?;
    let mut rng = s.rep_rng(rep);
    let mut subjects = Vec::with_capacity(s.n);
    let d = draw(s, &prep, &mut rng, |_, z| subjects.push(prep.sampler.color(&z)))?;
    for (i, reps_i) in subjects.iter_mut().enumerate() {
        let xi = d.x.values().row(i);
        for mut row in reps_i.row_iter_mut() {
            row += xi;
        }
    }
    let replicates = ReplicateSet::new(prep.grid.clone(), subjects)?;
    let (u, w) = match d.u {
        Some(u) => {
            let w = CurveSet::new(prep.grid.clone(), d.x.values() + &u)?;
            (Some(CurveSet::new(prep.grid.clone(), u)?), w)
        }
        None => (None, replicates.means()),
    };
    Ok(SimulatedDataset {
        x: d.x,
        u,
        w,
        y: d.y,
        replicates,
        true_slope: prep.slope.clone(),
        slope_coefs: prep.slope_coefs.clone(),
    })
}

/// Outcome of one Monte Carlo replication.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub index: usize,
    pub p_n: usize,
    pub e_n: f64,
    pub e_co: f64,
    pub converged: bool,
    /// Error message when the replication could not be fitted at all.
    pub failure: Option<String>,
}

impl RepOutcome {
    pub fn is_success(&self) -> bool {
        self.converged && self.failure.is_none()
    }
}

/// One results-table row.
#[derive(Debug, Clone, PartialEq)]
pub struct MCResultRow {
    pub scenario_id: String,
    pub family: Family,
    pub setting: Setting,
    pub n: usize,
    pub noise: f64,
    pub length_scale: Option<f64>,
    pub reps: usize,
    pub mean_pn: f64,
    pub mean_e_n: f64,
    pub mean_e_co: f64,
    /// Replications that did not converge or could not be fitted; excluded
    /// from the means.
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub row: MCResultRow,
    pub reps: Vec<RepOutcome>,
}

fn run_rep(s: &SimScenario, prep: &Prepared, index: usize) -> RepOutcome {
    let mut rng = s.rep_rng(index);
    let fitted = draw_for_fit(s, prep, &mut rng).and_then(|(w, kernel, y)| {
        let averaged = match s.surrogate {
            SurrogateMode::ReplicateMean => Some(s.replicates_per_subject),
            SurrogateMode::Independent => None,
        };
        fit_surrogate(&w, &kernel, &y, averaged, &s.pipeline_config())
    });
    let errors = fitted.and_then(|pf: PipelineFit| {
        let e_n = l2_error(&prep.slope, &pf.naive_slope)?;
        let e_co = l2_error(&prep.slope, &pf.fit.slope)?;
        Ok((pf.p_n, e_n, e_co, pf.fit.converged))
    });
    match errors {
        Ok((p_n, e_n, e_co, converged)) => RepOutcome {
            index,
            p_n,
            e_n,
            e_co,
            converged: converged && e_n.is_finite() && e_co.is_finite(),
            failure: None,
        },
        Err(e) => RepOutcome {
            index,
            p_n: 0,
            e_n: f64::NAN,
            e_co: f64::NAN,
            converged: false,
            failure: Some(e.to_string()),
        },
    }
}

/// Runs every replication (in parallel on the current rayon pool) and keeps
/// the per-replication outcomes. Output does not depend on the thread count.
pub fn run_scenario_detailed(s: &SimScenario) -> Result<ScenarioRun> {
    let prep = Prepared::new(s)?;
    let reps: Vec<RepOutcome> = (0..s.reps).into_par_iter().map(|r| run_rep(s, &prep, r)).collect();

    let ok: Vec<&RepOutcome> = reps.iter().filter(|r| r.is_success()).collect();
    if ok.is_empty() {
        let first = reps
            .iter()
            .find_map(|r| r.failure.clone())
            .unwrap_or_else(|| "solver did not converge".into());
        return Err(Error::Estimation(format!(
            "all {} replications of {} failed; first failure: {first}",
            s.reps,
            s.scenario_id()
        )));
    }
    let count = ok.len() as f64;
    let mean = |f: fn(&RepOutcome) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / count;
    let row = MCResultRow {
        scenario_id: s.scenario_id(),
        family: s.family,
        setting: s.setting,
        n: s.n,
        noise: s.noise,
        length_scale: (s.setting == Setting::SqExp).then_some(s.length_scale),
        reps: s.reps,
        mean_pn: mean(|r| r.p_n as f64),
        mean_e_n: mean(|r| r.e_n),
        mean_e_co: mean(|r| r.e_co),
        failures: reps.len() - ok.len(),
    };
    Ok(ScenarioRun { row, reps })
}

pub fn run_scenario(s: &SimScenario) -> Result<MCResultRow> {
    Ok(run_scenario_detailed(s)?.row)
}
