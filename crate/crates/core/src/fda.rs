//! Discretized functional data: grids, trapezoid quadrature, orthonormal
//! bases, score projections and L² metrics.
//!
//! Every curve lives on a shared [`Grid`]; integrals are trapezoid sums over
//! that grid, so "orthonormal" always means orthonormal under the grid's
//! quadrature weights.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest Fourier basis [`fourier_basis`] will build unless asked otherwise.
pub const DEFAULT_FOURIER_CAP: usize = 64;

/// Tolerance on |<rho_j, rho_k> - delta_jk| accepted by [`Basis::new`].
pub const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug)]
struct GridInner {
    points: Vec<f64>,
    weights: Vec<f64>,
}

/// Strictly increasing sample locations `t_1 < ... < t_m`, `m >= 2`.
///
/// Cloning is cheap; clones compare equal through pointer identity before
/// falling back to comparing points.
#[derive(Debug, Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite grid point".into()));
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "points must be strictly increasing (t[{}] = {} >= t[{}] = {})",
                i,
                points[i],
                i + 1,
                points[i + 1]
            )));
        }
        let m = points.len();
        let mut weights = vec![0.0; m];
        for j in 0..m - 1 {
            let h = 0.5 * (points[j + 1] - points[j]);
            weights[j] += h;
            weights[j + 1] += h;
        }
        Ok(Grid {
            inner: Arc::new(GridInner { points, weights }),
        })
    }

    /// `m` equally spaced points on `[a, b]`, endpoints included.
    pub fn uniform(a: f64, b: f64, m: usize) -> Result<Self> {
        if m < 2 || !(b > a) {
            return Err(Error::InvalidGrid(format!(
                "uniform grid needs m >= 2 and a < b (got m={m}, a={a}, b={b})"
            )));
        }
        let step = (b - a) / (m - 1) as f64;
        let mut points: Vec<f64> = (0..m).map(|j| a + step * j as f64).collect();
        points[m - 1] = b;
        Grid::new(points)
    }

    /// `m` equally spaced points on `[0, 1]`.
    pub fn unit(m: usize) -> Result<Self> {
        Grid::uniform(0.0, 1.0, m)
    }

    pub fn points(&self) -> &[f64] {
        &self.inner.points
    }

    /// Trapezoid quadrature weights.
    pub fn weights(&self) -> &[f64] {
        &self.inner.weights
    }

    pub fn len(&self) -> usize {
        self.inner.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> f64 {
        self.inner.points[0]
    }

    pub fn end(&self) -> f64 {
        self.inner.points[self.len() - 1]
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self == other
    }

    /// Trapezoid integral of sampled values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(self.weights()).map(|(v, w)| v * w).sum()
    }

    pub(crate) fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: grids differ ({} points on [{}, {}] vs {} points on [{}, {}])",
                self.len(),
                self.start(),
                self.end(),
                other.len(),
                other.start(),
                other.end()
            )))
        }
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner) || self.inner.points == other.inner.points
    }
}

/// A function sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    grid: Grid,
    values: DVector<f64>,
}

impl Curve {
    pub fn new(grid: Grid, values: DVector<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "curve has {} values for a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("curve values must be finite".into()));
        }
        Ok(Curve { grid, values })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = DVector::from_iterator(grid.len(), grid.points().iter().map(|&t| f(t)));
        Curve::new(grid.clone(), values)
    }

    pub fn zeros(grid: &Grid) -> Self {
        Curve {
            grid: grid.clone(),
            values: DVector::zeros(grid.len()),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    /// Pointwise `alpha * self + other`.
    pub fn axpy(&self, alpha: f64, other: &Curve) -> Result<Curve> {
        self.grid.ensure_same(&other.grid, "axpy")?;
        Curve::new(self.grid.clone(), &self.values * alpha + &other.values)
    }
}

/// `n >= 1` curves on one grid, stored row-wise (`n x m`).
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    grid: Grid,
    values: DMatrix<f64>,
}

impl CurveSet {
    pub fn new(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::InvalidArgument("a curve set needs at least one curve".into()));
        }
        if values.ncols() != grid.len() {
            return Err(Error::Dimension(format!(
                "curve set has {} columns for a {}-point grid",
                values.ncols(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("curve values must be finite".into()));
        }
        Ok(CurveSet { grid, values })
    }

    pub fn from_curves(curves: &[Curve]) -> Result<Self> {
        let first = curves
            .first()
            .ok_or_else(|| Error::InvalidArgument("a curve set needs at least one curve".into()))?;
        let grid = first.grid().clone();
        let mut values = DMatrix::zeros(curves.len(), grid.len());
        for (i, c) in curves.iter().enumerate() {
            grid.ensure_same(c.grid(), "curve set")?;
            values.row_mut(i).tr_copy_from(c.values());
        }
        Ok(CurveSet { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn curve(&self, i: usize) -> Curve {
        Curve {
            grid: self.grid.clone(),
            values: self.values.row(i).transpose(),
        }
    }

    pub fn curves(&self) -> impl Iterator<Item = Curve> + '_ {
        (0..self.len()).map(move |i| self.curve(i))
    }
}

/// Functions `rho_1, ..., rho_K` orthonormal under the grid quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    grid: Grid,
    /// `K x m`, one function per row.
    functions: DMatrix<f64>,
}

impl Basis {
    /// Builds a basis, rejecting function sets whose quadrature Gram matrix
    /// is further than [`ORTHONORMAL_TOL`] from the identity.
    pub fn new(grid: Grid, functions: DMatrix<f64>) -> Result<Self> {
        if functions.ncols() != grid.len() {
            return Err(Error::Dimension(format!(
                "basis functions have {} samples for a {}-point grid",
                functions.ncols(),
                grid.len()
            )));
        }
        let basis = Basis { grid, functions };
        let dev = basis.orthonormality_defect();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument(format!(
                "basis is not orthonormal (max Gram deviation {dev:.3e})"
            )));
        }
        Ok(basis)
    }

    pub(crate) fn new_unchecked(grid: Grid, functions: DMatrix<f64>) -> Self {
        Basis { grid, functions }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn functions(&self) -> &DMatrix<f64> {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.nrows() == 0
    }

    pub fn function(&self, k: usize) -> Curve {
        Curve {
            grid: self.grid.clone(),
            values: self.functions.row(k).transpose(),
        }
    }

    /// The first `k` functions.
    pub fn truncate(&self, k: usize) -> Result<Basis> {
        if k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {k} of {} basis functions",
                self.len()
            )));
        }
        Ok(Basis {
            grid: self.grid.clone(),
            functions: self.functions.rows(0, k).into_owned(),
        })
    }

    /// Quadrature Gram matrix `<rho_j, rho_k>`.
    pub fn gram(&self) -> DMatrix<f64> {
        let w = DVector::from_column_slice(self.grid.weights());
        let weighted = DMatrix::from_fn(self.len(), self.grid.len(), |k, j| {
            self.functions[(k, j)] * w[j]
        });
        &weighted * self.functions.transpose()
    }

    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.gram();
        let mut dev: f64 = 0.0;
        for j in 0..g.nrows() {
            for k in 0..g.ncols() {
                let target = if j == k { 1.0 } else { 0.0 };
                dev = dev.max((g[(j, k)] - target).abs());
            }
        }
        dev
    }
}

/// Projections `W_ik = <curve_i, rho_k>`, `n x p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(pub DMatrix<f64>);

impl ScoreMatrix {
    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.0.row(i).transpose()
    }

    /// The first `p` score columns.
    pub fn truncate(&self, p: usize) -> Result<ScoreMatrix> {
        if p > self.ncols() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {p} of {} score columns",
                self.ncols()
            )));
        }
        Ok(ScoreMatrix(self.0.columns(0, p).into_owned()))
    }

    pub fn column_means(&self) -> DVector<f64> {
        let n = self.nrows() as f64;
        DVector::from_iterator(self.ncols(), self.0.column_iter().map(|c| c.sum() / n))
    }
}

/// Trapezoid approximation of `∫ f g dt`.
pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    f.grid.ensure_same(&g.grid, "inner product")?;
    Ok(f
        .values
        .iter()
        .zip(g.values.iter())
        .zip(f.grid.weights())
        .map(|((a, b), w)| a * b * w)
        .sum())
}

/// First `k` functions of the orthonormal Fourier system on the grid's
/// interval: `1, √2 cos(2πs), √2 sin(2πs), √2 cos(4πs), ...` in the rescaled
/// coordinate `s = (t - a)/(b - a)`, normalized to unit L² norm on `[a, b]`.
pub fn fourier_basis(k: usize, grid: &Grid) -> Result<Basis> {
    fourier_basis_with_cap(k, grid, DEFAULT_FOURIER_CAP)
}

pub fn fourier_basis_with_cap(k: usize, grid: &Grid, cap: usize) -> Result<Basis> {
    if k == 0 {
        return Err(Error::InvalidArgument("Fourier basis needs k >= 1".into()));
    }
    if k > cap {
        return Err(Error::InvalidArgument(format!(
            "Fourier basis size {k} exceeds the cap of {cap}"
        )));
    }
    let (a, b) = (grid.start(), grid.end());
    let len = b - a;
    let scale = len.sqrt().recip();
    let functions = DMatrix::from_fn(k, grid.len(), |row, j| {
        let s = (grid.points()[j] - a) / len;
        if row == 0 {
            return scale;
        }
        let freq = ((row + 1) / 2) as f64;
        let arg = 2.0 * PI * freq * s;
        let trig = if row % 2 == 1 { arg.cos() } else { arg.sin() };
        std::f64::consts::SQRT_2 * scale * trig
    });
    Basis::new(grid.clone(), functions)
}

/// `n x p` matrix of quadrature inner products of each curve with `rho_1..rho_p`.
pub fn project_scores(curves: &CurveSet, basis: &Basis, p: usize) -> Result<ScoreMatrix> {
    curves.grid.ensure_same(&basis.grid, "project scores")?;
    if p > basis.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {p} scores but the basis has {} functions",
            basis.len()
        )));
    }
    let w = curves.grid.weights();
    let weighted = DMatrix::from_fn(p, curves.grid.len(), |k, j| basis.functions[(k, j)] * w[j]);
    Ok(ScoreMatrix(&curves.values * weighted.transpose()))
}

/// Pointwise `sum_k coeffs_k rho_k(t)`.
pub fn reconstruct_function(coeffs: &[f64], basis: &Basis) -> Result<Curve> {
    if coeffs.len() > basis.len() {
        return Err(Error::Dimension(format!(
            "{} coefficients for a basis of {} functions",
            coeffs.len(),
            basis.len()
        )));
    }
    let mut values = DVector::zeros(basis.grid.len());
    for (k, c) in coeffs.iter().enumerate() {
        values += basis.functions.row(k).transpose() * *c;
    }
    Curve::new(basis.grid.clone(), values)
}

/// Integrated squared difference `∫ (f - g)² dt`.
pub fn l2_error(f: &Curve, g: &Curve) -> Result<f64> {
    f.grid.ensure_same(&g.grid, "l2 error")?;
    Ok(f.values
        .iter()
        .zip(g.values.iter())
        .zip(f.grid.weights())
        .map(|((a, b), w)| (a - b) * (a - b) * w)
        .sum())
}

/// Column-centers a score matrix, returning the centered scores and the
/// column means.
pub fn center_scores(scores: &ScoreMatrix) -> Result<(ScoreMatrix, DVector<f64>)> {
    if scores.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "centering needs at least 2 rows, got {}",
            scores.nrows()
        )));
    }
    let means = scores.column_means();
    let mut centered = scores.0.clone();
    for (mut col, m) in centered.column_iter_mut().zip(means.iter()) {
        col.add_scalar_mut(-m);
    }
    Ok((ScoreMatrix(centered), means))
}
