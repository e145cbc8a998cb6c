use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::condscore::{logistic, Family};
use crate::covariance::CovKernel;
use crate::error::{Error, Result};
use crate::fda::{fourier_basis, Basis, Curve, CurveSet, Grid};

/// Mean (and variance) of the Poisson covariate coefficients.
pub const COEF_MEAN: f64 = 2.0;
const JITTER: f64 = 1e-10;
const NEGATIVE_TOL: f64 = 1e-6;

/// `K(s,t) = σ₁ exp{-(s-t)²/(2l²)}`.
pub fn sqexp_kernel(sigma1: f64, l: f64, grid: &Grid) -> Result<CovKernel> {
    if !(sigma1 > 0.0 && sigma1.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma1 must be > 0, got {sigma1}")));
    }
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidArgument(format!("length scale must be > 0, got {l}")));
    }
    CovKernel::from_fn(grid, |s, t| sigma1 * (-(s - t).powi(2) / (2.0 * l * l)).exp())
}

/// `K(s,t) = σ₂ {min(s,t) - st}` on a grid inside `[0, 1]`.
pub fn brownian_bridge_kernel(sigma2: f64, grid: &Grid) -> Result<CovKernel> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma2 must be > 0, got {sigma2}")));
    }
    if grid.start() < -1e-12 || grid.end() > 1.0 + 1e-12 {
        return Err(Error::InvalidGrid(format!(
            "Brownian bridge needs a grid inside [0, 1], got [{}, {}]",
            grid.start(),
            grid.end()
        )));
    }
    CovKernel::from_fn(grid, |s, t| sigma2 * (s.min(t) - s * t))
}

/// Draws mean-zero Gaussian curves with a fixed covariance through a
/// symmetric square root `L` of the jittered kernel matrix, `L L' = K + jI`.
#[derive(Debug, Clone)]
pub struct GpSampler {
    grid: Grid,
    factor: DMatrix<f64>,
}

impl GpSampler {
    pub fn new(kernel: &CovKernel) -> Result<Self> {
        let k = kernel.matrix();
        let m = k.nrows();
        let jitter = JITTER * k.trace() / m as f64;
        let jittered = k + DMatrix::identity(m, m) * jitter;
        let eig = SymmetricEigen::new(jittered);
        let top = eig.eigenvalues.max().max(0.0);
        let low = eig.eigenvalues.min();
        if low < -NEGATIVE_TOL * top {
            return Err(Error::Factorization(format!(
                "kernel has eigenvalue {low:.3e} below -{NEGATIVE_TOL:e} * {top:.3e}"
            )));
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let mut factor = eig.eigenvectors;
        for (mut col, r) in factor.column_iter_mut().zip(roots.iter()) {
            col *= *r;
        }
        Ok(GpSampler {
            grid: kernel.grid().clone(),
            factor,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Maps rows of i.i.d. standard normals to curve values, `Z L'`.
    pub fn color(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        z * self.factor.transpose()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> CurveSet {
        let z = standard_normals(n, self.grid.len(), rng);
        CurveSet::new(self.grid.clone(), self.color(&z)).expect("finite draws")
    }
}

pub(crate) fn standard_normals<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn sample_gp<R: Rng + ?Sized>(kernel: &CovKernel, n: usize, rng: &mut R) -> Result<CurveSet> {
    Ok(GpSampler::new(kernel)?.sample(n, rng))
}

/// How `2 n^{1/5}` is made an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PRounding {
    /// `p = 2 floor(n^{1/5})`.
    Floor,
    /// `p = 2 round(n^{1/5})`.
    #[default]
    Nearest,
}

impl std::str::FromStr for PRounding {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "floor" => Ok(PRounding::Floor),
            "nearest" => Ok(PRounding::Nearest),
            other => Err(format!("unknown rounding '{other}' (expected floor or nearest)")),
        }
    }
}

/// Number of covariate components for sample size `n`.
pub fn covariate_dimension(n: usize, rounding: PRounding) -> usize {
    let root = (n as f64).powf(0.2);
    let k = match rounding {
        PRounding::Floor => (root + 1e-12).floor(),
        PRounding::Nearest => root.round(),
    };
    2 * (k as usize).max(1)
}

/// `X_i = Σ_k ε_ik φ_k` over every function of `basis`, `ε_ik ~ Poisson(2)`.
/// Returns the curves and the `n x p` coefficient matrix.
pub fn generate_covariates_in<R: Rng + ?Sized>(
    basis: &Basis,
    n: usize,
    rng: &mut R,
) -> Result<(CurveSet, DMatrix<f64>)> {
    let poisson = Poisson::new(COEF_MEAN).expect("positive rate");
    let coefs = DMatrix::from_fn(n, basis.len(), |_, _| poisson.sample(rng));
    let values = &coefs * basis.functions();
    Ok((CurveSet::new(basis.grid().clone(), values)?, coefs))
}

/// Fourier covariates with `p = 2 floor(n^{1/5})` components.
pub fn generate_covariates<R: Rng + ?Sized>(n: usize, grid: &Grid, rng: &mut R) -> Result<(CurveSet, usize)> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let p = covariate_dimension(n, PRounding::Floor);
    let basis = fourier_basis(p, grid)?;
    let (curves, _) = generate_covariates_in(&basis, n, rng)?;
    Ok((curves, p))
}

/// `β̃ = Σ_k k⁻¹ φ_k` over every function of `basis`.
pub fn generate_slope_in(basis: &Basis) -> Result<(Curve, DVector<f64>)> {
    if basis.is_empty() {
        return Err(Error::InvalidArgument("slope needs at least one basis function".into()));
    }
    let coefs = DVector::from_fn(basis.len(), |k, _| 1.0 / (k + 1) as f64);
    let values = basis.functions().transpose() * &coefs;
    Ok((Curve::new(basis.grid().clone(), values)?, coefs))
}

/// True slope on the first `p` Fourier functions.
pub fn generate_slope(p: usize, grid: &Grid) -> Result<(Curve, DVector<f64>)> {
    if p == 0 {
        return Err(Error::InvalidArgument("p must be at least 1".into()));
    }
    generate_slope_in(&fourier_basis(p, grid)?)
}

/// Gaussian: `Y_i ~ N(∫X_i β̃, 1)`. Binary: `P(Y_i = 1) = F(max_k X_i(t_k))`.
pub fn generate_responses<R: Rng + ?Sized>(
    x: &CurveSet,
    slope: &Curve,
    family: Family,
    rng: &mut R,
) -> Result<DVector<f64>> {
    x.grid().ensure_same(slope.grid(), "covariates and slope")?;
    let n = x.len();
    match family {
        Family::Gaussian => {
            let weighted = slope.values().component_mul(&DVector::from_column_slice(x.grid().weights()));
            let mean = x.values() * weighted;
            Ok(DVector::from_fn(n, |i, _| {
                let e: f64 = StandardNormal.sample(rng);
                mean[i] + e
            }))
        }
        Family::Binary => {
            let eta = DVector::from_fn(n, |i, _| x.values().row(i).max());
            Ok(bernoulli_responses(&eta, rng))
        }
    }
}

/// `Y_i ~ Bernoulli(F(η_i))`.
pub fn bernoulli_responses<R: Rng + ?Sized>(eta: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    eta.map(|e| if rng.gen::<f64>() < logistic(e) { 1.0 } else { 0.0 })
}
