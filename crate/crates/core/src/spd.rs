//! Symmetric and symmetric positive definite matrices.
//!
//! Every matrix function (`sqrt`, `log`, `exp`, fractional powers) is evaluated
//! through a full symmetric eigendecomposition `S = U diag(λ) Uᵀ`, so the same
//! kernel serves all of them. Results of algebraic compositions are
//! re-symmetrized as `(M + Mᵀ)/2` before they are wrapped again.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};

/// Relative tolerance for the symmetry check `max|Sᵢⱼ − Sⱼᵢ| ≤ tol · max|Sᵢⱼ|`.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A matrix is accepted as positive definite iff `λ_min > PD_TOL · λ_max`.
pub const PD_TOL: f64 = 1e-14;

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn asymmetry(m: &DMatrix<f64>) -> (f64, f64) {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    (worst, m.amax())
}

/// Checks squareness, finiteness and the relative symmetry tolerance.
pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidInput(format!(
            "matrix is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::InvalidInput("matrix has dimension 0".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let (worst, scale) = asymmetry(m);
    if worst > SYMMETRY_TOL * scale {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (max |Sij - Sji| = {worst:e}, max |Sij| = {scale:e})"
        )));
    }
    Ok(())
}

/// Real symmetric matrix: tangent vectors and Euclidean gradients.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix(DMatrix<f64>);

/// Real symmetric positive definite matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdMatrix(DMatrix<f64>);

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymMatrix{}", self.0)
    }
}

impl fmt::Debug for SpdMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpdMatrix{}", self.0)
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct EigDecomp {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigDecomp {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// `U diag(f(λ)) Uᵀ`, symmetrized.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            let fl = f(lam);
            scaled.column_mut(j).scale_mut(fl);
        }
        symmetric_part(&(scaled * u.transpose()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map(|l| l)
    }
}

fn eig_unchecked(m: &DMatrix<f64>) -> EigDecomp {
    let se = SymmetricEigen::new(m.clone());
    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &se.eigenvectors.column(src));
    }
    EigDecomp {
        eigenvalues,
        eigenvectors,
    }
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
pub fn eig_sym(m: &DMatrix<f64>) -> Result<EigDecomp> {
    check_symmetric(m)?;
    Ok(eig_unchecked(m))
}

/// Scalar functions applied spectrally by [`mat_fn`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatFn {
    Sqrt,
    InvSqrt,
    Log,
    Exp,
    Pow(f64),
}

/// Applies `f` to the eigenvalues of `s`. Every function but `Exp` requires a
/// positive definite argument.
pub fn mat_fn(s: &SymMatrix, f: MatFn) -> Result<SymMatrix> {
    let e = s.eig();
    if !matches!(f, MatFn::Exp) {
        let (lmin, lmax) = (e.min_eigenvalue(), e.max_eigenvalue());
        if !(lmax > 0.0 && lmin > PD_TOL * lmax) {
            return Err(Error::Domain(format!(
                "{f:?} needs a positive definite argument (eigenvalues in [{lmin:e}, {lmax:e}])"
            )));
        }
    }
    let out = match f {
        MatFn::Sqrt => e.map(f64::sqrt),
        MatFn::InvSqrt => e.map(|l| 1.0 / l.sqrt()),
        MatFn::Log => e.map(f64::ln),
        MatFn::Exp => e.map(f64::exp),
        MatFn::Pow(p) => e.map(|l| l.powf(p)),
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{f:?} overflowed")));
    }
    Ok(SymMatrix(out))
}

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&m)?;
        Ok(Self(m))
    }

    /// Wraps `(m + mᵀ)/2`. Panics if `m` is not square.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetrize needs a square matrix");
        Self(symmetric_part(&m))
    }

    pub fn zeros(d: usize) -> Self {
        Self(DMatrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Row-major constructor with the symmetry check.
    pub fn from_row_slice(d: usize, data: &[f64]) -> Result<Self> {
        if data.len() != d * d {
            return Err(Error::InvalidInput(format!(
                "expected {} entries, got {}",
                d * d,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(d, d, data))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn eig(&self) -> EigDecomp {
        eig_unchecked(&self.0)
    }

    pub fn exp(&self) -> Result<SpdMatrix> {
        let e = mat_fn(self, MatFn::Exp)?;
        SpdMatrix::from_sym(e)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eig().min_eigenvalue()
    }

    /// `trace(self · other)` without forming the product.
    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }

    /// `Mᵀ · self · M` for an arbitrary `M` with matching row count.
    pub fn congruence(&self, m: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrize(m.transpose() * &self.0 * m)
    }
}

impl SpdMatrix {
    /// Checks symmetry and `λ_min > 1e-14 · λ_max`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::from_sym(SymMatrix::new(m)?)
    }

    pub fn from_sym(s: SymMatrix) -> Result<Self> {
        let e = s.eig();
        let (lmin, lmax) = (e.min_eigenvalue(), e.max_eigenvalue());
        if !(lmax > 0.0 && lmin > PD_TOL * lmax) {
            return Err(Error::Domain(format!(
                "matrix is not positive definite (eigenvalues in [{lmin:e}, {lmax:e}])"
            )));
        }
        Ok(Self(s.0))
    }

    /// Symmetrizes `m` and wraps it without the spectral check. Only for results
    /// that are positive definite by construction.
    pub(crate) fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        Self(symmetric_part(&m))
    }

    pub fn from_row_slice(d: usize, data: &[f64]) -> Result<Self> {
        Self::from_sym(SymMatrix::from_row_slice(d, data)?)
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn scaled_identity(d: usize, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!("scale {c} is not positive")));
        }
        Ok(Self(DMatrix::identity(d, d) * c))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::from_sym(SymMatrix::from_diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_sym(&self) -> SymMatrix {
        SymMatrix(self.0.clone())
    }

    pub fn eig(&self) -> EigDecomp {
        eig_unchecked(&self.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Lower Cholesky factor `L` with `S = L Lᵀ`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.cholesky().l()
    }

    pub(crate) fn cholesky(&self) -> Cholesky<f64, Dyn> {
        Cholesky::new_unchecked(self.0.clone())
    }

    pub fn inverse(&self) -> SpdMatrix {
        Self::from_matrix_unchecked(self.cholesky().inverse())
    }

    pub fn logdet(&self) -> f64 {
        let l = self.cholesky().l();
        2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn sqrt(&self) -> SpdMatrix {
        Self::from_matrix_unchecked(self.eig().map(f64::sqrt))
    }

    pub fn inv_sqrt(&self) -> SpdMatrix {
        Self::from_matrix_unchecked(self.eig().map(|l| 1.0 / l.sqrt()))
    }

    pub fn pow(&self, p: f64) -> SpdMatrix {
        Self::from_matrix_unchecked(self.eig().map(|l| l.powf(p)))
    }

    pub fn log(&self) -> SymMatrix {
        SymMatrix(self.eig().map(f64::ln))
    }

    pub fn scale(&self, c: f64) -> Result<SpdMatrix> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!("scale {c} is not positive")));
        }
        Ok(Self(&self.0 * c))
    }

    /// `Mᵀ S M`; positive definite when `M` has full column rank.
    pub fn congruence(&self, m: &DMatrix<f64>) -> Result<SpdMatrix> {
        if m.nrows() != self.dim() {
            return Err(dim_mismatch(self.dim(), m.nrows()));
        }
        SpdMatrix::from_sym(SymMatrix::symmetrize(m.transpose() * &self.0 * m))
    }

    /// `L⁻¹ M L⁻ᵀ` where `S = L Lᵀ`: the whitening of `m` by `self`.
    pub(crate) fn whiten(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let chol = self.cholesky();
        let l = chol.l_dirty();
        let half = l
            .solve_lower_triangular(m)
            .expect("cholesky factor is invertible");
        let full = l
            .solve_lower_triangular(&half.transpose())
            .expect("cholesky factor is invertible");
        symmetric_part(&full)
    }

    pub fn add(&self, other: &SpdMatrix) -> Result<SpdMatrix> {
        if self.dim() != other.dim() {
            return Err(dim_mismatch(self.dim(), other.dim()));
        }
        Ok(Self(&self.0 + &other.0))
    }
}

/// Left singular vectors and singular values (descending) of `L_b⁻¹ L_a`,
/// where `a = L_a L_aᵀ`, `b = L_b L_bᵀ`.
///
/// `b^{-1/2} a b^{-1/2}` is orthogonally similar to `C Cᵀ` with `C = L_b⁻¹ L_a`,
/// so its eigenvalues are `σ(C)²`. Working with `C` keeps the small eigenvalues
/// accurate to `ε κ(C)` instead of `ε κ(C)²`.
fn pencil_svd(a: &SpdMatrix, b: &SpdMatrix) -> (DMatrix<f64>, DVector<f64>) {
    let la = a.cholesky_factor();
    let lb = b.cholesky_factor();
    let c = lb.solve_lower_triangular(&la).expect("cholesky factor is invertible");
    let d = c.nrows();
    let svd = faer::Mat::<f64>::from_fn(d, d, |i, j| c[(i, j)])
        .svd()
        .expect("SVD of a small dense matrix converges");
    let (u, s) = (svd.U(), svd.S());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let sv = DVector::from_iterator(d, order.iter().map(|&k| s[k]));
    let u = DMatrix::from_fn(d, d, |i, j| u[(i, order[j])]);
    (u, sv)
}

/// Singular values of a dense matrix, descending.
pub(crate) fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let f = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let mut sv = f.singular_values().expect("SVD of a dense matrix converges");
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Eigenvalues (descending) of the pencil `(a, b)`, i.e. of `b^{-1/2} a b^{-1/2}`.
pub fn generalized_eigenvalues(a: &SpdMatrix, b: &SpdMatrix) -> Result<DVector<f64>> {
    if a.dim() != b.dim() {
        return Err(dim_mismatch(a.dim(), b.dim()));
    }
    Ok(pencil_svd(a, b).1.map(|s| s * s))
}

/// Weighted geodesic `A #_t B = A^{1/2}(A^{-1/2} B A^{-1/2})^t A^{1/2}` for `t ∈ [0, 1]`.
///
/// Evaluated with the Cholesky factor `A = L Lᵀ` as `L (L⁻¹ B L⁻ᵀ)^t Lᵀ`, which is
/// the same matrix by congruence invariance of the geodesic; the middle power
/// comes from the singular values of `L⁻¹ L_B`.
pub fn geodesic(a: &SpdMatrix, b: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    if a.dim() != b.dim() {
        return Err(dim_mismatch(a.dim(), b.dim()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("geodesic parameter {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(a.clone());
    }
    if t == 1.0 {
        return Ok(b.clone());
    }
    let (u, sv) = pencil_svd(b, a);
    let lu = a.cholesky_factor() * u;
    let mut scaled = lu.clone();
    for (j, s) in sv.iter().enumerate() {
        scaled.column_mut(j).scale_mut(s.powf(2.0 * t));
    }
    Ok(SpdMatrix::from_matrix_unchecked(SymMatrix::symmetrize(scaled * lu.transpose()).into_matrix()))
}

/// Matrix geometric mean `A # B = A #_{1/2} B`.
pub fn geometric_mean(a: &SpdMatrix, b: &SpdMatrix) -> Result<SpdMatrix> {
    geodesic(a, b, 0.5)
}

/// Parallel sum `A : B = (A⁻¹ + B⁻¹)⁻¹`.
pub fn parallel_sum(a: &SpdMatrix, b: &SpdMatrix) -> Result<SpdMatrix> {
    if a.dim() != b.dim() {
        return Err(dim_mismatch(a.dim(), b.dim()));
    }
    let s = SpdMatrix::from_matrix_unchecked(a.inverse().as_matrix() + b.inverse().as_matrix());
    Ok(s.inverse())
}

/// Löwner order test `A ⪯ B` up to `tol`: `λ_min(B − A) ≥ −tol`.
///
/// Panics on a dimension mismatch.
pub fn loewner_leq(a: &SymMatrix, b: &SymMatrix, tol: f64) -> bool {
    assert_eq!(a.dim(), b.dim(), "loewner_leq: dimension mismatch");
    let diff = SymMatrix::symmetrize(b.as_matrix() - a.as_matrix());
    diff.min_eigenvalue() >= -tol
}

/// Relative Frobenius distance `‖A − B‖_F / max(‖B‖_F, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        SymMatrix(&self.0 * rhs)
    }
}

impl Neg for &SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        SymMatrix(-&self.0)
    }
}

impl Add for SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: SymMatrix) -> SymMatrix {
        SymMatrix(self.0 + rhs.0)
    }
}

impl Sub for SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: SymMatrix) -> SymMatrix {
        SymMatrix(self.0 - rhs.0)
    }
}

impl Mul<f64> for SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        SymMatrix(self.0 * rhs)
    }
}

impl Neg for SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        SymMatrix(-self.0)
    }
}
