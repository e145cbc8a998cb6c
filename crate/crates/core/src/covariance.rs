//! Measurement-error covariance: the pooled within-subject estimator from
//! replicates, the Nyström eigen-decomposition of its integral operator, the
//! variance-explained truncation rule and the diagonal score-error model.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::fda::{center_scores, project_scores, Basis, CurveSet, Grid};

const SYMMETRY_TOL: f64 = 1e-10;
/// Negative eigenvalues down to `-NEGATIVE_CLIP * lambda_1` are clipped to 0.
const NEGATIVE_CLIP: f64 = 1e-6;
/// Eigenvalues at or below `POSITIVE_FLOOR * lambda_1` count as zero.
const POSITIVE_FLOOR: f64 = 1e-10;

/// A covariance kernel sampled on a grid, `K(t_j, t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovKernel {
    grid: Grid,
    matrix: DMatrix<f64>,
}

impl CovKernel {
    /// Validates shape and symmetry, then stores the exactly symmetrized matrix.
    pub fn new(grid: Grid, matrix: DMatrix<f64>) -> Result<Self> {
        let m = grid.len();
        if matrix.nrows() != m || matrix.ncols() != m {
            return Err(Error::Dimension(format!(
                "kernel is {}x{} for a {m}-point grid",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotCovariance("non-finite kernel entry".into()));
        }
        let scale = matrix.amax().max(1.0);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotCovariance(format!(
                "kernel is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(CovKernel { grid, matrix })
    }

    pub fn from_fn(grid: &Grid, k: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let t = grid.points();
        let matrix = DMatrix::from_fn(t.len(), t.len(), |a, b| k(t[a], t[b]));
        CovKernel::new(grid.clone(), matrix)
    }

    pub fn zeros(grid: &Grid) -> Self {
        CovKernel {
            grid: grid.clone(),
            matrix: DMatrix::zeros(grid.len(), grid.len()),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Quadrature integral of the diagonal, `∫ K(t, t) dt`.
    pub fn trace_integral(&self) -> f64 {
        self.grid.integrate(self.matrix.diagonal().as_slice())
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|v| *v == 0.0)
    }
}

/// Eigenfunctions of the kernel's integral operator with their eigenvalues,
/// sorted by decreasing eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    basis: Basis,
    eigenvalues: Vec<f64>,
}

impl EigenBasis {
    pub fn new(basis: Basis, eigenvalues: Vec<f64>) -> Result<Self> {
        if basis.len() != eigenvalues.len() {
            return Err(Error::Dimension(format!(
                "{} eigenvalues for {} eigenfunctions",
                eigenvalues.len(),
                basis.len()
            )));
        }
        if eigenvalues.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidArgument("eigenvalues must be nonnegative".into()));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("eigenvalues must be sorted descending".into()));
        }
        Ok(EigenBasis { basis, eigenvalues })
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        self.basis.grid()
    }

    /// Sum over components of `lambda_k rho_k(s) rho_k(t)`.
    pub fn reconstruct_kernel(&self) -> DMatrix<f64> {
        let f = self.basis.functions();
        let m = f.ncols();
        let mut k = DMatrix::zeros(m, m);
        for (idx, lambda) in self.eigenvalues.iter().enumerate() {
            let row = f.row(idx);
            k += row.transpose() * row * *lambda;
        }
        k
    }
}

/// Per-subject replicate curves `W~_i^(l)` on one grid.
#[derive(Debug, Clone)]
pub struct ReplicateSet {
    grid: Grid,
    ids: Vec<String>,
    /// One `m_i x m` matrix per subject.
    subjects: Vec<DMatrix<f64>>,
}

impl ReplicateSet {
    /// Subjects are labelled by their position.
    pub fn new(grid: Grid, subjects: Vec<DMatrix<f64>>) -> Result<Self> {
        let ids = (0..subjects.len()).map(|i| i.to_string()).collect();
        ReplicateSet::with_ids(grid, ids, subjects)
    }

    pub fn with_ids(grid: Grid, ids: Vec<String>, subjects: Vec<DMatrix<f64>>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Replicates("no subjects".into()));
        }
        if ids.len() != subjects.len() {
            return Err(Error::Dimension(format!(
                "{} ids for {} subjects",
                ids.len(),
                subjects.len()
            )));
        }
        for (id, reps) in ids.iter().zip(&subjects) {
            if reps.nrows() < 2 {
                return Err(Error::Replicates(format!(
                    "subject {id} has {} replicate(s); at least 2 are required",
                    reps.nrows()
                )));
            }
            if reps.ncols() != grid.len() {
                return Err(Error::Dimension(format!(
                    "subject {id}: replicates have {} samples for a {}-point grid",
                    reps.ncols(),
                    grid.len()
                )));
            }
            if reps.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "subject {id}: non-finite replicate value"
                )));
            }
        }
        Ok(ReplicateSet { grid, ids, subjects })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn subjects(&self) -> &[DMatrix<f64>] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Per-subject replicate means, one curve per subject.
    pub fn means(&self) -> CurveSet {
        let m = self.grid.len();
        let mut values = DMatrix::zeros(self.len(), m);
        for (i, reps) in self.subjects.iter().enumerate() {
            let r = reps.nrows() as f64;
            for j in 0..m {
                values[(i, j)] = reps.column(j).sum() / r;
            }
        }
        CurveSet::new(self.grid.clone(), values).expect("replicate means are finite")
    }

    /// Replicate count if every subject has the same number, else `None`.
    pub fn common_count(&self) -> Option<usize> {
        let first = self.subjects[0].nrows();
        self.subjects.iter().all(|s| s.nrows() == first).then_some(first)
    }
}

/// Pooled within-subject covariance,
/// `K^(s,t) = sum_i sum_l (W_il(t) - W_i.(t))(W_il(s) - W_i.(s)) / sum_i (m_i - 1)`.
pub fn estimate_error_kernel(reps: &ReplicateSet) -> Result<CovKernel> {
    let m = reps.grid.len();
    let mut scatter = DMatrix::<f64>::zeros(m, m);
    let mut dof = 0usize;
    for reps_i in &reps.subjects {
        let mut centered = reps_i.clone();
        let count = reps_i.nrows() as f64;
        for mut col in centered.column_iter_mut() {
            let mean = col.sum() / count;
            // Deviations within rounding of the mean are exact ties.
            let tie = 4.0 * f64::EPSILON * mean.abs();
            col.apply(|x| {
                let d = *x - mean;
                *x = if d.abs() <= tie { 0.0 } else { d };
            });
        }
        scatter.gemm_tr(1.0, &centered, &centered, 1.0);
        dof += reps_i.nrows() - 1;
    }
    scatter /= dof as f64;
    CovKernel::new(reps.grid.clone(), scatter)
}

/// Nyström eigen-decomposition of the integral operator with trapezoid
/// weights. Eigenfunctions have unit L² norm; eigenvalues are operator
/// eigenvalues. Returns at most `max_components` numerically positive pairs.
pub fn eigen_decompose(kernel: &CovKernel, max_components: usize) -> Result<EigenBasis> {
    let grid = kernel.grid.clone();
    let m = grid.len();
    let sqrt_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let weighted = DMatrix::from_fn(m, m, |a, b| sqrt_w[a] * kernel.matrix[(a, b)] * sqrt_w[b]);
    let eig = SymmetricEigen::new(weighted);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lead = eig.eigenvalues[order[0]].max(0.0);
    let lowest = eig.eigenvalues[order[m - 1]];
    let clip_floor = -NEGATIVE_CLIP * lead;
    if lowest < clip_floor && lowest < -f64::EPSILON * m as f64 {
        return Err(Error::NotCovariance(format!(
            "operator eigenvalue {lowest:.3e} is below -{NEGATIVE_CLIP:e} * {lead:.3e}"
        )));
    }

    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&idx| lead > 0.0 && eig.eigenvalues[idx] > POSITIVE_FLOOR * lead)
        .take(max_components)
        .collect();

    let mut functions = DMatrix::zeros(keep.len(), m);
    let mut eigenvalues = Vec::with_capacity(keep.len());
    for (row, &idx) in keep.iter().enumerate() {
        let v = eig.eigenvectors.column(idx);
        let mut f: Vec<f64> = (0..m).map(|j| v[j] / sqrt_w[j]).collect();
        // Sign convention: largest-magnitude sample is positive.
        let pivot = f
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (j, x)| if x.abs() > acc.1.abs() + 1e-12 { (j, *x) } else { acc })
            .0;
        if f[pivot] < 0.0 {
            f.iter_mut().for_each(|x| *x = -*x);
        }
        functions.row_mut(row).copy_from_slice(&f);
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
    }
    EigenBasis::new(Basis::new_unchecked(grid, functions), eigenvalues)
}

/// Which per-component variances drive the truncation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceSource {
    /// Sample variances of the centered observed-curve scores.
    #[default]
    Observed,
    /// The error eigenvalues themselves.
    ErrorEigenvalues,
}

impl std::str::FromStr for VarianceSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "observed" => Ok(VarianceSource::Observed),
            "error_eigenvalues" => Ok(VarianceSource::ErrorEigenvalues),
            other => Err(format!("unknown variance source '{other}' (expected observed or error_eigenvalues)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub epsilon: f64,
    pub cap: usize,
    pub source: VarianceSource,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            epsilon: 0.02,
            cap: 20,
            source: VarianceSource::Observed,
        }
    }
}

impl SelectionConfig {
    /// The cap actually used: `min(cap, n - 1, m - 1, basis size)`.
    pub fn effective_cap(&self, n: usize, grid_len: usize, basis_len: usize) -> usize {
        self.cap
            .min(n.saturating_sub(1))
            .min(grid_len - 1)
            .min(basis_len)
    }
}

/// Cumulative variance fractions `c_1, ..., c_cap` of the observed curves'
/// scores in the basis.
pub fn variance_explained(
    observed: &CurveSet,
    basis: &EigenBasis,
    cap: usize,
    source: VarianceSource,
) -> Result<Vec<f64>> {
    let cap = cap.min(basis.len());
    if cap == 0 {
        return Err(Error::InvalidArgument("no basis components to select from".into()));
    }
    let variances: Vec<f64> = match source {
        VarianceSource::Observed => {
            if observed.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "variance explained needs at least 2 curves, got {}",
                    observed.len()
                )));
            }
            let scores = project_scores(observed, basis.basis(), cap)?;
            let (centered, _) = center_scores(&scores)?;
            let denom = (observed.len() - 1) as f64;
            centered
                .matrix()
                .column_iter()
                .map(|c| c.norm_squared() / denom)
                .collect()
        }
        VarianceSource::ErrorEigenvalues => basis.eigenvalues()[..cap].to_vec(),
    };
    let total: f64 = variances.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument(
            "no variance in the retained components".into(),
        ));
    }
    let mut acc = 0.0;
    let mut cumulative: Vec<f64> = variances
        .iter()
        .map(|v| {
            acc += v;
            acc / total
        })
        .collect();
    *cumulative.last_mut().expect("cap >= 1") = 1.0;
    Ok(cumulative)
}

/// Smallest `k` with `c_{k+1} - c_k < epsilon`, else the cap.
pub fn select_pn(observed: &CurveSet, basis: &EigenBasis, epsilon: f64, cap: usize) -> Result<usize> {
    select_pn_with(
        observed,
        basis,
        &SelectionConfig {
            epsilon,
            cap,
            source: VarianceSource::Observed,
        },
    )
}

pub fn select_pn_with(observed: &CurveSet, basis: &EigenBasis, cfg: &SelectionConfig) -> Result<usize> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1), got {}",
            cfg.epsilon
        )));
    }
    if cfg.cap == 0 {
        return Err(Error::InvalidArgument("cap must be at least 1".into()));
    }
    if observed.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "p_n selection needs at least 2 curves, got {}",
            observed.len()
        )));
    }
    let cumulative = variance_explained(observed, basis, cfg.cap, cfg.source)?;
    Ok(pick_elbow(&cumulative, cfg.epsilon))
}

pub fn pick_elbow(cumulative: &[f64], epsilon: f64) -> usize {
    for k in 1..cumulative.len() {
        if cumulative[k] - cumulative[k - 1] < epsilon {
            return k;
        }
    }
    cumulative.len()
}

/// Diagonal score-error covariance `omega1` and the response-family divisor.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    omega1: DVector<f64>,
    scale: f64,
}

impl ErrorModel {
    pub fn new(omega1: DVector<f64>, scale: f64) -> Result<Self> {
        if omega1.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("omega1 entries must be finite and >= 0".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be > 0, got {scale}")));
        }
        Ok(ErrorModel { omega1, scale })
    }

    /// No measurement error in `p` components.
    pub fn zero(p: usize) -> Self {
        ErrorModel {
            omega1: DVector::zeros(p),
            scale: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.omega1.len()
    }

    pub fn omega1(&self) -> &DVector<f64> {
        &self.omega1
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Diagonal of `omega = omega1 / scale`.
    pub fn omega_diag(&self) -> DVector<f64> {
        &self.omega1 / self.scale
    }

    pub fn omega(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.omega_diag())
    }

    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        ErrorModel::new(self.omega1.clone(), scale)
    }

    /// Error model of a mean of `m` i.i.d. replicates.
    pub fn averaged_over(&self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("replicate count must be >= 1".into()));
        }
        ErrorModel::new(&self.omega1 / m as f64, self.scale)
    }
}

/// `omega1 = diag(lambda_1, ..., lambda_pn)`, `omega = omega1 / scale`.
pub fn build_error_model(basis: &EigenBasis, p_n: usize, scale: f64) -> Result<ErrorModel> {
    if p_n == 0 || p_n > basis.len() {
        return Err(Error::InvalidArgument(format!(
            "p_n = {p_n} is outside 1..={}",
            basis.len()
        )));
    }
    ErrorModel::new(DVector::from_column_slice(&basis.eigenvalues()[..p_n]), scale)
}
