use std::fmt;
use std::path::{Path, PathBuf};

use fmeasure::condscore::{Family, GaussianEquation, NewtonConfig};
use fmeasure::covariance::{
    estimate_error_kernel, variance_explained, CovKernel, SelectionConfig, VarianceSource,
};
use fmeasure::io::{self, Report};
use fmeasure::pipeline::{fit_surrogate, working_basis, PipelineConfig, PipelineFit};
use fmeasure::sim::{
    brownian_bridge_kernel, inject_and_fit, run_scenario_detailed, simulate_dataset, sqexp_kernel,
    BinaryLink, CovariateBasis, PRounding, Setting, SimScenario, SurrogateMode,
};
use fmeasure::{Error, Grid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, RunConfig};

/// A command failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or input files (exit 2).
    Input(String),
    /// Anything else that stopped the run (exit 3).
    Internal(String),
    /// Estimation finished without converging; output was written (exit 4).
    NotConverged(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Internal(_) => 3,
            Failure::NotConverged(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) | Failure::Internal(m) | Failure::NotConverged(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidGrid(_)
            | Error::GridMismatch(_)
            | Error::Dimension(_)
            | Error::InvalidArgument(_)
            | Error::Replicates(_)
            | Error::Response(_)
            | Error::Format { .. } => Failure::Input(msg),
            _ => Failure::Internal(msg),
        }
    }
}

/// Reading inputs: every error, including i/o, is an input error.
fn input<T>(r: Result<T, Error>) -> Result<T, Failure> {
    r.map_err(|e| match e {
        Error::Io { .. } => Failure::Input(e.to_string()),
        other => other.into(),
    })
}

/// Settings shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Globals {
    fn load_config(&self, required: bool) -> Result<RunConfig, Failure> {
        match &self.config {
            Some(p) => Ok(RunConfig::load(p)?),
            None if required => Err(Failure::Input("this command needs --config <path>".into())),
            None => Ok(RunConfig::default()),
        }
    }

    fn out_path(&self, cfg: &RunConfig, default: &str) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.path("out"))
            .unwrap_or_else(|| PathBuf::from(default))
    }
}

fn solver_config(cfg: &RunConfig) -> Result<(NewtonConfig, usize, GaussianEquation), Failure> {
    let mut solver = NewtonConfig::default();
    if let Some(v) = cfg.get::<f64>("solver", "tol")? {
        cfg.check_positive("solver", "tol", v)?;
        solver.tol = v;
    }
    if let Some(v) = cfg.get::<usize>("solver", "max_iter")? {
        cfg.check("solver", "max_iter", v > 0, "must be at least 1")?;
        solver.max_iter = v;
    }
    if let Some(v) = cfg.get::<usize>("solver", "max_halvings")? {
        cfg.check("solver", "max_halvings", v > 0, "must be at least 1")?;
        solver.max_halvings = v;
    }
    if let Some(v) = cfg.get::<f64>("solver", "jacobian_ridge")? {
        cfg.check_positive("solver", "jacobian_ridge", v)?;
        solver.jacobian_ridge = v;
    }
    let outer_max = cfg.get::<usize>("solver", "outer_max")?.unwrap_or(fmeasure::condscore::DEFAULT_OUTER_MAX);
    cfg.check("solver", "outer_max", outer_max > 0, "must be at least 1")?;
    let equation = cfg.get::<GaussianEquation>("solver", "gaussian_equation")?.unwrap_or_default();
    Ok((solver, outer_max, equation))
}

fn selection_config(cfg: &RunConfig) -> Result<(SelectionConfig, Option<usize>), Failure> {
    let mut sel = SelectionConfig::default();
    if let Some(v) = cfg.get::<f64>("selection", "epsilon")? {
        cfg.check("selection", "epsilon", v > 0.0 && v < 1.0, format!("must lie in (0, 1), got {v}"))?;
        sel.epsilon = v;
    }
    if let Some(v) = cfg.get::<usize>("selection", "cap")? {
        cfg.check("selection", "cap", v > 0, "must be at least 1")?;
        sel.cap = v;
    }
    if let Some(v) = cfg.get::<VarianceSource>("selection", "source")? {
        sel.source = v;
    }
    let p_n = cfg.get::<usize>("selection", "p_n")?;
    if let Some(v) = p_n {
        cfg.check("selection", "p_n", v > 0, "must be at least 1")?;
    }
    Ok((sel, p_n))
}

fn pipeline_config(cfg: &RunConfig, family: Family) -> Result<PipelineConfig, Failure> {
    let (solver, outer_max, gaussian_equation) = solver_config(cfg)?;
    let (selection, fixed_pn) = selection_config(cfg)?;
    Ok(PipelineConfig {
        family,
        selection,
        fixed_pn,
        solver,
        outer_max,
        gaussian_equation,
    })
}

/// Every combination of the listed families, settings, sample sizes, noise
/// levels and length scales.
pub fn scenarios(cfg: &RunConfig, seed: Option<u64>) -> Result<Vec<SimScenario>, Failure> {
    let families = cfg.require_list::<Family>("scenario", "family")?;
    let settings = cfg.require_list::<Setting>("scenario", "setting")?;
    let ns = cfg.require_list::<usize>("scenario", "n")?;
    let noises = cfg.require_list::<f64>("scenario", "noise")?;
    for &v in &noises {
        cfg.check_positive("scenario", "noise", v)?;
    }
    let lengths = cfg.list::<f64>("scenario", "length_scale")?;
    if settings.contains(&Setting::SqExp) {
        let ls = lengths
            .as_ref()
            .ok_or_else(|| ConfigError("missing required key [scenario] length_scale (needed by sqexp)".into()))?;
        for &l in ls {
            cfg.check("scenario", "length_scale", l > 0.0 && l < 1.0, format!("must lie in (0, 1), got {l}"))?;
        }
    }
    for &n in &ns {
        cfg.check("scenario", "n", n >= 50, format!("must be at least 50, got {n}"))?;
    }
    let reps = cfg.get::<usize>("scenario", "reps")?.unwrap_or(50);
    cfg.check("scenario", "reps", reps >= 1, "must be at least 1")?;
    let replicates = cfg.get::<usize>("scenario", "replicates_per_subject")?.unwrap_or(50);
    cfg.check("scenario", "replicates_per_subject", replicates >= 2, "must be at least 2")?;
    let grid_size = cfg.get::<usize>("scenario", "grid_size")?.unwrap_or(101);
    cfg.check("scenario", "grid_size", grid_size >= 3, "must be at least 3")?;
    let seed = match seed {
        Some(s) => s,
        None => cfg.get::<u64>("scenario", "seed")?.unwrap_or(1),
    };
    let p = cfg.get::<usize>("scenario", "p")?;
    if let Some(v) = p {
        cfg.check("scenario", "p", v > 0, "must be at least 1")?;
    }
    let covariate_basis = cfg.get::<CovariateBasis>("scenario", "covariate_basis")?.unwrap_or_default();
    let p_rounding = cfg.get::<PRounding>("scenario", "p_rounding")?.unwrap_or_default();
    let binary_link = cfg.get::<BinaryLink>("scenario", "binary_link")?.unwrap_or_default();
    let surrogate = cfg.get::<SurrogateMode>("scenario", "surrogate")?.unwrap_or_default();

    let mut out = Vec::new();
    for &family in &families {
        let pipeline = pipeline_config(cfg, family)?;
        for &setting in &settings {
            let ls = match setting {
                Setting::SqExp => lengths.clone().unwrap_or_default(),
                Setting::BrownianBridge => vec![f64::NAN],
            };
            for &n in &ns {
                for &noise in &noises {
                    for &l in &ls {
                        let mut s = SimScenario::new(family, setting, n, noise, l);
                        s.reps = reps;
                        s.replicates_per_subject = replicates;
                        s.grid_size = grid_size;
                        s.seed = seed;
                        s.covariate_basis = covariate_basis;
                        s.p_rounding = p_rounding;
                        s.binary_link = binary_link;
                        s.surrogate = surrogate;
                        s.fixed_p = p;
                        s.fixed_pn = pipeline.fixed_pn;
                        s.selection = pipeline.selection;
                        s.solver = pipeline.solver;
                        s.outer_max = pipeline.outer_max;
                        s.gaussian_equation = pipeline.gaussian_equation;
                        s.validate()?;
                        out.push(s);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn dump_dataset(dir: &Path, s: &SimScenario) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Internal(format!("cannot create {}: {e}", dir.display())))?;
    let d = simulate_dataset(s, 0)?;
    let id = s.scenario_id();
    let ids: Vec<String> = (0..s.n).map(|i| i.to_string()).collect();
    if s.surrogate == SurrogateMode::Independent {
        io::write_curves(&dir.join(format!("{id}.curves.csv")), &d.w, &ids)?;
    }
    io::write_replicates(&dir.join(format!("{id}.replicates.csv")), &d.replicates)?;
    io::write_response(&dir.join(format!("{id}.response.csv")), &ids, &d.y)?;
    let truth = Report {
        fields: vec![("p".into(), d.slope_coefs.len().to_string())],
        curves: vec![("true_slope".into(), d.true_slope.clone())],
    };
    io::write_report(&dir.join(format!("{id}.truth.csv")), &truth)?;
    Ok(())
}

pub fn simulate(g: &Globals, dump_data: Option<&Path>) -> Result<(), Failure> {
    let cfg = g.load_config(true)?;
    let list = scenarios(&cfg, g.seed)?;
    let out = g.out_path(&cfg, "results.csv");
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for s in &list {
        match run_scenario_detailed(s) {
            Ok(run) => {
                let r = &run.row;
                println!(
                    "{}: mean_pn={:.2} mean_E_n={:.4} mean_E_co={:.4} failures={}/{}",
                    r.scenario_id, r.mean_pn, r.mean_e_n, r.mean_e_co, r.failures, r.reps
                );
                if let Some(f) = run.reps.iter().find_map(|o| o.failure.as_ref()) {
                    eprintln!("warning: {}: {} replication(s) failed; first: {f}", r.scenario_id, r.failures);
                }
                rows.push(run.row);
            }
            Err(e) => {
                eprintln!("error: {}: {e}", s.scenario_id());
                failed.push(s.scenario_id());
            }
        }
        if let Some(dir) = dump_data {
            dump_dataset(dir, s)?;
        }
    }
    io::write_results(&out, &rows).map_err(|e| Failure::Internal(e.to_string()))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Internal(format!("scenario(s) failed: {}", failed.join(", "))))
    }
}

fn fit_report(pf: &PipelineFit) -> Report {
    let fit = &pf.fit;
    let mut fields = vec![
        ("family".to_string(), pf.data.family().as_str().to_string()),
        ("p_n".to_string(), pf.p_n.to_string()),
        ("beta0".to_string(), fit.coef.beta0.to_string()),
        ("sigma2".to_string(), fit.sigma2.map(|s| s.to_string()).unwrap_or_else(|| "NA".into())),
        ("converged".to_string(), fit.converged.to_string()),
        ("iterations".to_string(), fit.iterations.to_string()),
        ("final_residual".to_string(), fit.final_residual.to_string()),
        ("naive_beta0".to_string(), fit.initial.beta0.to_string()),
    ];
    for (k, b) in fit.coef.beta.iter().enumerate() {
        fields.push((format!("coef_{}", k + 1), b.to_string()));
    }
    for (k, b) in fit.initial.beta.iter().enumerate() {
        fields.push((format!("naive_coef_{}", k + 1), b.to_string()));
    }
    Report {
        fields,
        curves: vec![
            ("corrected".into(), fit.slope.clone()),
            ("naive".into(), pf.naive_slope.clone()),
        ],
    }
}

fn diagnostics_text(pf: &PipelineFit) -> String {
    let mut s = String::new();
    s.push_str(&format!("p_n = {}\n", pf.p_n));
    s.push_str(&format!("fourier_fallback = {}\n", pf.fourier_fallback));
    s.push_str(&format!("converged = {}\n", pf.fit.converged));
    s.push_str(&format!("iterations = {}\n", pf.fit.iterations));
    s.push_str(&format!("final_residual = {:e}\n", pf.fit.final_residual));
    let cum: Vec<String> = pf.variance_explained.iter().map(|c| format!("{c:.6}")).collect();
    s.push_str(&format!("variance_explained = {}\n", cum.join(",")));
    s.push_str(&pf.diagnostics.to_string());
    s.push('\n');
    s
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

#[derive(Debug, Clone, Default)]
pub struct EstimateArgs {
    pub curves: Option<PathBuf>,
    pub replicates: Option<PathBuf>,
    pub response: Option<PathBuf>,
    pub diagnostics: Option<PathBuf>,
}

/// Fits a dataset from files; shared with tests that check the CLI against
/// the library.
pub fn estimate_from_files(
    curves: Option<&Path>,
    replicates: &Path,
    response: &Path,
    pipeline: &PipelineConfig,
) -> Result<PipelineFit, Failure> {
    let reps = input(io::read_replicates(replicates))?;
    let (y_ids, y) = input(io::read_response(response))?;
    let (w, ids, averaged) = match curves {
        Some(p) => {
            let lc = input(io::read_curves(p))?;
            if lc.curves.grid() != reps.grid() {
                return Err(Failure::Input(format!(
                    "{} and {} use different grids",
                    p.display(),
                    replicates.display()
                )));
            }
            (lc.curves, lc.ids, None)
        }
        None => {
            let m = reps.common_count().ok_or_else(|| {
                Failure::Input("replicate-mean surrogates need the same replicate count for every subject".into())
            })?;
            (reps.means(), reps.ids().to_vec(), Some(m))
        }
    };
    let y = input(io::align_response(&ids, &y_ids, &y))?;
    let kernel = estimate_error_kernel(&reps)?;
    Ok(fit_surrogate(&w, &kernel, &y, averaged, pipeline)?)
}

pub fn estimate(g: &Globals, args: &EstimateArgs) -> Result<(), Failure> {
    let cfg = g.load_config(true)?;
    let family = cfg.require::<Family>("scenario", "family")?;
    let pipeline = pipeline_config(&cfg, family)?;
    let replicates = args
        .replicates
        .clone()
        .or_else(|| cfg.path("replicates"))
        .ok_or_else(|| Failure::Input("no replicates file: pass --replicates or set [io] replicates".into()))?;
    let response = args
        .response
        .clone()
        .or_else(|| cfg.path("response"))
        .ok_or_else(|| Failure::Input("no response file: pass --response or set [io] response".into()))?;
    let curves = args.curves.clone().or_else(|| cfg.path("curves"));
    let out = g.out_path(&cfg, "fit.csv");
    let diag = args
        .diagnostics
        .clone()
        .or_else(|| cfg.path("diagnostics"))
        .unwrap_or_else(|| with_suffix(&out, ".diagnostics.txt"));

    let pf = estimate_from_files(curves.as_deref(), &replicates, &response, &pipeline)?;
    io::write_report(&out, &fit_report(&pf)).map_err(|e| Failure::Internal(e.to_string()))?;
    io::write_atomic(&diag, &diagnostics_text(&pf)).map_err(|e| Failure::Internal(e.to_string()))?;
    println!(
        "p_n={} beta0={} converged={} iterations={}",
        pf.p_n, pf.fit.coef.beta0, pf.fit.converged, pf.fit.iterations
    );
    if pf.fit.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(format!(
            "solver did not converge (final residual {:e}); results written to {}",
            pf.fit.final_residual,
            out.display()
        )))
    }
}

pub fn basis(g: &Globals, replicates: Option<&Path>) -> Result<(), Failure> {
    let cfg = g.load_config(false)?;
    let (selection, _) = selection_config(&cfg)?;
    let path = replicates
        .map(Path::to_path_buf)
        .or_else(|| cfg.path("replicates"))
        .ok_or_else(|| Failure::Input("no replicates file: pass --replicates or set [io] replicates".into()))?;
    let reps = input(io::read_replicates(&path))?;
    let kernel = estimate_error_kernel(&reps)?;
    let m = reps.grid().len();
    let count = selection.cap.min(m - 1).max(1);
    let (eig, fallback) = working_basis(&kernel, count)?;
    if fallback {
        eprintln!(
            "warning: the estimated error kernel is zero; all eigenvalues are 0 and the exported functions are an arbitrary orthonormal (Fourier) basis"
        );
    }
    let cumulative = variance_explained(&reps.means(), &eig, eig.len(), selection.source)?;
    let out = g.out_path(&cfg, "basis.csv");
    io::write_eigenbasis(&out, &eig, &cumulative).map_err(|e| Failure::Internal(e.to_string()))?;
    let lead: Vec<String> = eig.eigenvalues().iter().take(5).map(|l| format!("{l:.5e}")).collect();
    println!("{} components; leading eigenvalues {}", eig.len(), lead.join(", "));
    Ok(())
}

fn injection_kernel(cfg: &RunConfig, grid: &Grid) -> Result<CovKernel, Failure> {
    let setting = cfg.get::<Setting>("scenario", "setting")?.unwrap_or(Setting::SqExp);
    let noise = cfg.require::<f64>("scenario", "noise")?;
    cfg.check("scenario", "noise", noise >= 0.0 && noise.is_finite(), format!("must be >= 0, got {noise}"))?;
    if noise == 0.0 {
        return Ok(CovKernel::zeros(grid));
    }
    Ok(match setting {
        Setting::SqExp => {
            let l = cfg.require::<f64>("scenario", "length_scale")?;
            cfg.check_positive("scenario", "length_scale", l)?;
            sqexp_kernel(noise, l, grid)?
        }
        Setting::BrownianBridge => brownian_bridge_kernel(noise, grid)?,
    })
}

pub fn inject(g: &Globals, curves: Option<&Path>, response: Option<&Path>) -> Result<(), Failure> {
    let cfg = g.load_config(true)?;
    if let Some(f) = cfg.get::<Family>("scenario", "family")? {
        if f != Family::Gaussian {
            return Err(Failure::Input("[scenario] family: the injection protocol needs gaussian".into()));
        }
    }
    let pipeline = pipeline_config(&cfg, Family::Gaussian)?;
    let reps = cfg.get::<usize>("scenario", "replicates_per_subject")?.unwrap_or(50);
    cfg.check("scenario", "replicates_per_subject", reps >= 2, "must be at least 2")?;
    let seed = match g.seed {
        Some(s) => s,
        None => cfg.get::<u64>("scenario", "seed")?.unwrap_or(1),
    };
    let curves = curves
        .map(Path::to_path_buf)
        .or_else(|| cfg.path("curves"))
        .ok_or_else(|| Failure::Input("no clean curves file: pass --curves or set [io] curves".into()))?;
    let response = response
        .map(Path::to_path_buf)
        .or_else(|| cfg.path("response"))
        .ok_or_else(|| Failure::Input("no response file: pass --response or set [io] response".into()))?;
    let clean = input(io::read_curves(&curves))?;
    let (y_ids, y) = input(io::read_response(&response))?;
    let y = input(io::align_response(&clean.ids, &y_ids, &y))?;
    let kernel = injection_kernel(&cfg, clean.curves.grid())?;
    let out = g.out_path(&cfg, "inject.csv");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = inject_and_fit(&clean.curves, &y, &kernel, reps, &pipeline, &mut rng)?;
    let report = Report {
        fields: vec![
            ("p_n".into(), r.p_n.to_string()),
            ("E_n".into(), r.e_n.to_string()),
            ("E_co".into(), r.e_co.to_string()),
            ("converged".into(), r.fit.fit.converged.to_string()),
            ("sigma2".into(), r.fit.fit.sigma2.map(|s| s.to_string()).unwrap_or_else(|| "NA".into())),
        ],
        curves: vec![
            ("reference".into(), r.reference.clone()),
            ("naive".into(), r.naive.clone()),
            ("corrected".into(), r.corrected.clone()),
        ],
    };
    io::write_report(&out, &report).map_err(|e| Failure::Internal(e.to_string()))?;
    println!("p_n={} E_n={:.6} E_co={:.6}", r.p_n, r.e_n, r.e_co);
    if r.fit.fit.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(format!("solver did not converge; results written to {}", out.display())))
    }
}
