//! Dense real symmetric linear algebra.
//!
//! Everything here works on small dense matrices (desk scale, n up to a few
//! hundred at most). Complex Hermitian data can be brought in through
//! [`embed_hermitian`], which maps `A + iB` to the real symmetric
//! `[[A, -B], [B, A]]`; eigenvalues of the embedding are those of the
//! Hermitian matrix, each repeated twice, so log-determinants double.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for PSD/PD classification.
pub const DEFAULT_CONE_TOL: f64 = 1e-9;

/// Relative eigenvalue threshold below which `sqrt_psd` clamps to zero by default.
pub const DEFAULT_CLAMP_REL: f64 = 1e-10;

/// Literal inputs are rejected when `max |a_ij - a_ji|` exceeds this times `1 + ||A||`.
pub const LITERAL_ASYMMETRY_TOL: f64 = 1e-8;

const JACOBI_MAX_SWEEPS: usize = 100;

/// A real symmetric `n x n` matrix, `n >= 1`.
///
/// Construction symmetrizes the input by averaging it with its transpose,
/// so the stored entries satisfy `a[i][j] == a[j][i]` bit for bit.
#[derive(Clone, PartialEq)]
pub struct SymmetricMatrix {
    m: DMatrix<f64>,
}

impl SymmetricMatrix {
    /// Wraps a square matrix, symmetrizing it.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::shape(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::shape("symmetric matrix must have n >= 1"));
        }
        Ok(Self::symmetrized(m))
    }

    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        let mut s = (m + t) * 0.5;
        // (a + b) / 2 is commutative in floating point, but keep the two
        // triangles identical regardless of how the sum was evaluated.
        let n = s.nrows();
        for i in 0..n {
            for j in 0..i {
                s[(i, j)] = s[(j, i)];
            }
        }
        Self { m: s }
    }

    /// Builds from row-major nested rows, symmetrizing silently.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows_to_matrix(rows)?)
    }

    /// Builds from a user-supplied literal, rejecting inputs whose asymmetry
    /// exceeds `1e-8 * (1 + ||A||)`.
    pub fn from_literal(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows_to_matrix(rows)?;
        if m.nrows() != m.ncols() {
            return Err(Error::Parse(format!(
                "matrix literal must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse("matrix literal has non-finite entries".into()));
        }
        let asym = (&m - m.transpose()).amax();
        let bound = LITERAL_ASYMMETRY_TOL * (1.0 + m.norm());
        if asym > bound {
            return Err(Error::Parse(format!(
                "matrix literal is not symmetric (max asymmetry {asym:e} > {bound:e})"
            )));
        }
        Self::new(m)
    }

    pub fn identity(n: usize) -> Self {
        assert!(n >= 1, "dimension must be at least 1");
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1, "dimension must be at least 1");
        Self {
            m: DMatrix::zeros(n, n),
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        assert!(!d.is_empty(), "dimension must be at least 1");
        Self {
            m: DMatrix::from_diagonal(&DVector::from_column_slice(d)),
        }
    }

    /// A `1 x 1` matrix.
    pub fn scalar(x: f64) -> Self {
        Self::from_diagonal(&[x])
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.m.norm()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.m.diagonal().iter().copied().collect()
    }

    /// `S * self * S` for symmetric `S`.
    pub fn congruence(&self, s: &SymmetricMatrix) -> SymmetricMatrix {
        Self::symmetrized(&s.m * &self.m * &s.m)
    }

    /// Inverse of a PD matrix through its Cholesky factor.
    pub fn inverse_pd(&self) -> Result<SymmetricMatrix> {
        let n = self.dim();
        Ok(Self::symmetrized(solve_pd(self, &DMatrix::identity(n, n))?))
    }

    pub fn max_abs_diff(&self, other: &SymmetricMatrix) -> f64 {
        (&self.m - &other.m).amax()
    }

    fn check_same_dim(&self, other: &SymmetricMatrix) {
        assert_eq!(
            self.dim(),
            other.dim(),
            "dimension mismatch in symmetric matrix arithmetic"
        );
    }
}

impl fmt::Debug for SymmetricMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricMatrix({:?})", self.to_rows())
    }
}

impl Serialize for SymmetricMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymmetricMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SymmetricMatrix::from_literal(&rows).map_err(serde::de::Error::custom)
    }
}

impl Add for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn add(self, rhs: &SymmetricMatrix) -> SymmetricMatrix {
        self.check_same_dim(rhs);
        SymmetricMatrix { m: &self.m + &rhs.m }
    }
}

impl Sub for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn sub(self, rhs: &SymmetricMatrix) -> SymmetricMatrix {
        self.check_same_dim(rhs);
        SymmetricMatrix { m: &self.m - &rhs.m }
    }
}

impl Mul<f64> for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn mul(self, rhs: f64) -> SymmetricMatrix {
        SymmetricMatrix { m: &self.m * rhs }
    }
}

impl Neg for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn neg(self) -> SymmetricMatrix {
        SymmetricMatrix { m: -&self.m }
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Parse("matrix literal has no rows".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::Parse("matrix literal has an empty row".into()));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Parse(format!(
            "ragged matrix literal: row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Maps the Hermitian matrix `re + i*im` to its real symmetric embedding
/// `[[re, -im], [im, re]]`.
pub fn embed_hermitian(re: &SymmetricMatrix, im: &DMatrix<f64>) -> Result<SymmetricMatrix> {
    let n = re.dim();
    if im.nrows() != n || im.ncols() != n {
        return Err(Error::shape(format!(
            "imaginary part must be {n}x{n}, got {}x{}",
            im.nrows(),
            im.ncols()
        )));
    }
    let skew = (im + im.transpose()).amax();
    if skew > LITERAL_ASYMMETRY_TOL * (1.0 + im.norm()) {
        return Err(Error::shape("imaginary part of a Hermitian matrix must be antisymmetric"));
    }
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(re.as_matrix());
    m.view_mut((n, n), (n, n)).copy_from(re.as_matrix());
    m.view_mut((0, n), (n, n)).copy_from(&(-im));
    m.view_mut((n, 0), (n, n)).copy_from(im);
    SymmetricMatrix::new(m)
}

/// Eigendecomposition `A = V diag(values) V^T` with ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.amax()
    }

    /// `V diag(h(lambda)) V^T`.
    pub fn map(&self, h: impl Fn(f64) -> f64) -> SymmetricMatrix {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= h(self.values[j]);
        }
        SymmetricMatrix::symmetrized(scaled * self.vectors.transpose())
    }
}

/// Cyclic Jacobi eigensolver, capped at 100 sweeps.
///
/// Eigenvectors are normalized so their first nonzero component is positive.
pub fn sym_eig(a: &SymmetricMatrix) -> Result<SymEig> {
    let n = a.dim();
    let mut m = a.m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = m.norm();

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "{n}x{n} symmetric matrix with norm {scale:e} after {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| m[(i, i)]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).into_owned();
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-14) {
            if *first < 0.0 {
                col = -col;
            }
        }
        vectors.set_column(dst, &col);
    }
    Ok(SymEig { values, vectors })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Cone {
    Pd,
    Psd,
    Indefinite,
}

impl fmt::Display for Cone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cone::Pd => "PD",
            Cone::Psd => "PSD",
            Cone::Indefinite => "INDEFINITE",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConeMembership {
    pub min_eigenvalue: f64,
    pub classification: Cone,
    pub tolerance_used: f64,
}

impl ConeMembership {
    fn from_min(min_eigenvalue: f64, tol: f64) -> Self {
        let classification = if min_eigenvalue > tol {
            Cone::Pd
        } else if min_eigenvalue >= -tol {
            Cone::Psd
        } else {
            Cone::Indefinite
        };
        Self {
            min_eigenvalue,
            classification,
            tolerance_used: tol,
        }
    }

    /// PD or PSD.
    pub fn is_psd(&self) -> bool {
        self.classification != Cone::Indefinite
    }
}

pub fn classify_cone(a: &SymmetricMatrix, tol: f64) -> Result<ConeMembership> {
    assert!(tol >= 0.0, "cone tolerance must be non-negative");
    Ok(ConeMembership::from_min(sym_eig(a)?.min(), tol))
}

/// `1e-10 * max |lambda|`.
pub fn default_clamp_threshold(eig: &SymEig) -> f64 {
    DEFAULT_CLAMP_REL * eig.max_abs()
}

/// PSD square root; eigenvalues below `tol` are clamped to zero.
pub fn sqrt_psd(k: &SymmetricMatrix, tol: f64) -> Result<SymmetricMatrix> {
    let eig = sym_eig(k)?;
    if eig.min() < -tol {
        return Err(Error::cone("matrix passed to sqrt_psd", eig.min()));
    }
    Ok(psd_sqrt_from_eig(&eig, tol))
}

pub(crate) fn psd_sqrt_from_eig(eig: &SymEig, clamp: f64) -> SymmetricMatrix {
    eig.map(|l| if l < clamp || l <= 0.0 { 0.0 } else { l.sqrt() })
}

fn cholesky(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(a.clone())
}

fn not_pd(what: &str, a: &DMatrix<f64>) -> Error {
    let min = SymmetricMatrix::new(a.clone())
        .and_then(|s| sym_eig(&s))
        .map(|e| e.min())
        .unwrap_or(f64::NAN);
    Error::cone(what, min)
}

/// `log det A` from the Cholesky factor of a PD matrix.
pub fn logdet_pd(a: &SymmetricMatrix) -> Result<f64> {
    logdet_pd_named(a, "matrix passed to logdet_pd")
}

pub(crate) fn logdet_pd_named(a: &SymmetricMatrix, what: &str) -> Result<f64> {
    let chol = cholesky(&a.m).ok_or_else(|| not_pd(what, &a.m))?;
    let l = chol.l_dirty();
    let s: f64 = (0..a.dim()).map(|i| l[(i, i)].ln()).sum();
    if !s.is_finite() {
        return Err(not_pd(what, &a.m));
    }
    Ok(2.0 * s)
}

/// `A^{-1} B` for PD `A`.
pub fn solve_pd(a: &SymmetricMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    solve_pd_named(a, b, "matrix passed to solve_pd")
}

pub(crate) fn solve_pd_named(
    a: &SymmetricMatrix,
    b: &DMatrix<f64>,
    what: &str,
) -> Result<DMatrix<f64>> {
    if b.nrows() != a.dim() {
        return Err(Error::shape(format!(
            "solve_pd: A is {n}x{n} but B has {} rows",
            b.nrows(),
            n = a.dim()
        )));
    }
    let chol = cholesky(&a.m).ok_or_else(|| not_pd(what, &a.m))?;
    Ok(chol.solve(b))
}

/// `A - B C^{-1} B^T` for `M = [[A, B], [B^T, C]]` with `A` of size `split`.
pub fn schur_complement(m: &SymmetricMatrix, split: usize) -> Result<SymmetricMatrix> {
    let n = m.dim();
    if split == 0 || split >= n {
        return Err(Error::shape(format!(
            "schur split {split} must lie strictly between 0 and {n}"
        )));
    }
    let r = n - split;
    let a = m.m.view((0, 0), (split, split));
    let b = m.m.view((0, split), (split, r)).into_owned();
    let c = SymmetricMatrix::symmetrized(m.m.view((split, split), (r, r)).into_owned());
    let cinv_bt = solve_pd_named(&c, &b.transpose(), "trailing block of the Schur partition")?;
    Ok(SymmetricMatrix::symmetrized(a - b * cinv_bt))
}
