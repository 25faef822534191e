//! Small dense complex linear algebra.
//!
//! Everything here targets the tiny dimensions of transmit-antenna arrays
//! (a handful up to ~16), so storage is a flat row-major `Vec` and the
//! eigensolver is cyclic complex Jacobi.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Relative asymmetry above which a matrix is rejected as non-Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-9;

const JACOBI_MAX_SWEEPS: usize = 64;

/// Complex column vector.
#[derive(Clone, PartialEq)]
pub struct CVector {
    entries: Vec<C64>,
}

impl CVector {
    pub fn new(entries: Vec<C64>) -> Self {
        CVector { entries }
    }

    pub fn from_real(values: &[f64]) -> Self {
        CVector::new(values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        CVector::new(vec![ZERO; dim])
    }

    /// The `k`-th standard basis vector of dimension `dim`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = CVector::zeros(dim);
        v.entries[k] = ONE;
        v
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, C64> {
        self.entries.iter()
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.entries
    }

    pub fn norm_sqr(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Inner product `self† other`.
    pub fn dot(&self, other: &CVector) -> C64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scale(&self, s: C64) -> CVector {
        CVector::new(self.entries.iter().map(|z| z * s).collect())
    }

    pub fn scale_real(&self, s: f64) -> CVector {
        CVector::new(self.entries.iter().map(|z| z * s).collect())
    }

    pub fn add(&self, other: &CVector) -> CVector {
        debug_assert_eq!(self.dim(), other.dim());
        CVector::new(self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &CVector) -> CVector {
        debug_assert_eq!(self.dim(), other.dim());
        CVector::new(self.entries.iter().zip(&other.entries).map(|(a, b)| a - b).collect())
    }

    /// Stacks `self` on top of `other`.
    pub fn concat(&self, other: &CVector) -> CVector {
        let mut entries = self.entries.clone();
        entries.extend_from_slice(&other.entries);
        CVector::new(entries)
    }

    /// Entries `start..end` as a new vector.
    pub fn segment(&self, start: usize, end: usize) -> CVector {
        CVector::new(self.entries[start..end].to_vec())
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// True when every imaginary part is exactly zero.
    pub fn is_real(&self) -> bool {
        self.entries.iter().all(|z| z.im == 0.0)
    }

    /// Component of `self` orthogonal to `dir` (`dir` may be zero).
    pub fn orthogonal_to(&self, dir: &CVector) -> CVector {
        let nn = dir.norm_sqr();
        if nn == 0.0 {
            return self.clone();
        }
        let coef = dir.dot(self) / nn;
        self.sub(&dir.scale(coef))
    }
}

impl Index<usize> for CVector {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.entries[i]
    }
}

impl IndexMut<usize> for CVector {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.entries[i]
    }
}

impl fmt::Debug for CVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.iter()).finish()
    }
}

impl From<Vec<C64>> for CVector {
    fn from(entries: Vec<C64>) -> Self {
        CVector::new(entries)
    }
}

/// Dense row-major complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[CVector]) -> Result<Self> {
        let rows = cols.first().map_or(0, CVector::dim);
        if cols.iter().any(|c| c.dim() != rows) {
            return Err(Error::Dimension("columns of unequal length".into()));
        }
        Ok(CMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn column(&self, j: usize) -> CVector {
        CVector::new((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn mul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows, "matrix product dimension mismatch");
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &CVector) -> CVector {
        assert_eq!(self.cols, v.dim(), "matrix-vector dimension mismatch");
        CVector::new(
            (0..self.rows)
                .map(|i| (0..self.cols).map(|k| self[(i, k)] * v[k]).sum())
                .collect(),
        )
    }

    /// `self† v` without forming the adjoint.
    pub fn adjoint_mul_vec(&self, v: &CVector) -> CVector {
        assert_eq!(self.rows, v.dim(), "matrix-vector dimension mismatch");
        CVector::new(
            (0..self.cols)
                .map(|j| (0..self.rows).map(|k| self[(k, j)].conj() * v[k]).sum())
                .collect(),
        )
    }

    pub fn add(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Sub-block `rows r0..r1`, `cols c0..c1`.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> CMatrix {
        CMatrix::from_fn(r1 - r0, c1 - c0, |i, j| self[(r0 + i, c0 + j)])
    }

    /// Writes `blk` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, blk: &CMatrix) {
        for i in 0..blk.rows {
            for j in 0..blk.cols {
                self[(r0 + i, c0 + j)] = blk[(i, j)];
            }
        }
    }

    /// Outer product `a b†`.
    pub fn outer(a: &CVector, b: &CVector) -> CMatrix {
        CMatrix::from_fn(a.dim(), b.dim(), |i, j| a[i] * b[j].conj())
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[C64]> = self.data.chunks(self.cols.max(1)).collect();
        f.debug_list().entries(rows).finish()
    }
}

/// Hermitian matrix. Construction symmetrizes, so `a[i][j] == conj(a[j][i])`
/// holds bit-exactly and the diagonal is real.
#[derive(Clone, PartialEq)]
pub struct HermitianMatrix {
    m: CMatrix,
}

impl HermitianMatrix {
    /// Validates and symmetrizes `(A + A†)/2`. Rejects relative asymmetry
    /// above [`HERMITIAN_TOL`].
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!("{}x{} matrix is not square", m.rows, m.cols)));
        }
        let scale = m.max_abs().max(1.0);
        let n = m.rows;
        for i in 0..n {
            for j in i..n {
                if (m[(i, j)] - m[(j, i)].conj()).norm() > HERMITIAN_TOL * scale {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not Hermitian at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(HermitianMatrix::symmetrized(m))
    }

    fn symmetrized(mut m: CMatrix) -> Self {
        let n = m.rows;
        for i in 0..n {
            m[(i, i)] = C64::new(m[(i, i)].re, 0.0);
            for j in (i + 1)..n {
                let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                m[(i, j)] = avg;
                m[(j, i)] = avg.conj();
            }
        }
        HermitianMatrix { m }
    }

    pub fn zeros(n: usize) -> Self {
        HermitianMatrix { m: CMatrix::zeros(n, n) }
    }

    pub fn identity(n: usize) -> Self {
        HermitianMatrix { m: CMatrix::identity(n) }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        HermitianMatrix { m: CMatrix::from_fn(n, n, |i, j| if i == j { C64::new(diag[i], 0.0) } else { ZERO }) }
    }

    /// Rank-one `v v†`.
    pub fn outer(v: &CVector) -> Self {
        HermitianMatrix::symmetrized(CMatrix::outer(v, v))
    }

    /// `Q diag(values) Q†`.
    pub fn from_eigen(q: &UnitaryMatrix, values: &[f64]) -> Self {
        let n = values.len();
        let qm = q.as_matrix();
        let scaled = CMatrix::from_fn(n, n, |i, j| qm[(i, j)] * values[j]);
        HermitianMatrix::symmetrized(scaled.mul(&qm.adjoint()))
    }

    /// `U A U†` for any (not necessarily square) `U` with matching columns.
    pub fn congruence(&self, u: &CMatrix) -> HermitianMatrix {
        HermitianMatrix::symmetrized(u.mul(&self.m).mul(&u.adjoint()))
    }

    pub fn dim(&self) -> usize {
        self.m.rows
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.m[(i, i)].re).sum()
    }

    /// `x† A x` (real for Hermitian `A`).
    pub fn quad_form(&self, x: &CVector) -> f64 {
        x.dot(&self.m.mul_vec(x)).re
    }

    pub fn max_abs(&self) -> f64 {
        self.m.max_abs()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.frobenius_norm()
    }

    /// Frobenius inner product `tr(A B)`.
    pub fn inner(&self, other: &HermitianMatrix) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self.m[(i, j)] * other.m[(j, i)]).re;
            }
        }
        acc
    }

    pub fn add(&self, other: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix::symmetrized(self.m.add(&other.m))
    }

    pub fn sub(&self, other: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix::symmetrized(self.m.sub(&other.m))
    }

    pub fn scale(&self, s: f64) -> HermitianMatrix {
        HermitianMatrix { m: self.m.scale(C64::new(s, 0.0)) }
    }

    /// Leading principal `k x k` block.
    pub fn leading_block(&self, k: usize) -> HermitianMatrix {
        HermitianMatrix { m: self.m.block(0, k, 0, k) }
    }

    /// Adds `s` to every diagonal entry.
    pub fn shift(&self, s: f64) -> HermitianMatrix {
        let mut m = self.m.clone();
        for i in 0..self.dim() {
            m[(i, i)] += s;
        }
        HermitianMatrix { m }
    }
}

impl Index<(usize, usize)> for HermitianMatrix {
    type Output = C64;
    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.m[idx]
    }
}

impl fmt::Debug for HermitianMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.m.fmt(f)
    }
}

/// Square matrix with orthonormal columns.
#[derive(Clone, PartialEq)]
pub struct UnitaryMatrix {
    m: CMatrix,
}

impl UnitaryMatrix {
    pub fn identity(n: usize) -> Self {
        UnitaryMatrix { m: CMatrix::identity(n) }
    }

    /// Wraps `m` after checking `‖m†m − I‖_max ≤ tol`.
    pub fn new(m: CMatrix, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension("unitary matrix must be square".into()));
        }
        let u = UnitaryMatrix { m };
        let err = u.unitarity_error();
        if err > tol {
            return Err(Error::InvalidInput(format!("matrix is not unitary (error {err:e})")));
        }
        Ok(u)
    }

    pub fn dim(&self) -> usize {
        self.m.rows
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn column(&self, j: usize) -> CVector {
        self.m.column(j)
    }

    pub fn adjoint(&self) -> UnitaryMatrix {
        UnitaryMatrix { m: self.m.adjoint() }
    }

    pub fn mul(&self, other: &UnitaryMatrix) -> UnitaryMatrix {
        UnitaryMatrix { m: self.m.mul(&other.m) }
    }

    /// `U v`.
    pub fn apply(&self, v: &CVector) -> CVector {
        self.m.mul_vec(v)
    }

    /// `U† v`.
    pub fn apply_adjoint(&self, v: &CVector) -> CVector {
        self.m.adjoint_mul_vec(v)
    }

    /// `diag(I_k, self)`.
    pub fn embed_lower(&self, k: usize) -> UnitaryMatrix {
        let n = self.dim() + k;
        let mut m = CMatrix::identity(n);
        m.set_block(k, k, &self.m);
        UnitaryMatrix { m }
    }

    /// `‖U†U − I‖_max`.
    pub fn unitarity_error(&self) -> f64 {
        let g = self.m.adjoint().mul(&self.m);
        g.sub(&CMatrix::identity(self.dim())).max_abs()
    }
}

impl fmt::Debug for UnitaryMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.m.fmt(f)
    }
}

/// Unitary `U` whose first column is `h/‖h‖`, so `U†h = (‖h‖, 0, …, 0)ᵀ`.
///
/// Built from one Householder reflector followed by a phase fix on the
/// first column. The zero vector maps to the identity.
pub fn unitary_completion(h: &CVector) -> UnitaryMatrix {
    let n = h.dim();
    let norm = h.norm();
    if norm == 0.0 {
        return UnitaryMatrix::identity(n);
    }
    let x1 = h[0];
    let phase = if x1.norm() > 0.0 { x1 / x1.norm() } else { ONE };
    let tail: f64 = h.iter().skip(1).map(|z| z.norm_sqr()).sum();
    if tail == 0.0 {
        let mut m = CMatrix::identity(n);
        m[(0, 0)] = phase;
        return UnitaryMatrix { m };
    }
    // v = h + phase·‖h‖·e1 sends h to -phase·‖h‖·e1 under I - 2vv†/v†v.
    let mut v = h.clone();
    v[0] = x1 + phase * norm;
    let vv = v.norm_sqr();
    let mut m = CMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { ONE } else { ZERO };
        delta - v[i] * v[j].conj() * (2.0 / vv)
    });
    // Right-multiply by diag(-phase, 1, …, 1).
    for i in 0..n {
        m[(i, 0)] *= -phase;
    }
    UnitaryMatrix { m }
}

/// Eigendecomposition `A = Q diag(λ) Q†` with `λ` ascending.
pub fn eig_hermitian(a: &HermitianMatrix) -> Result<(UnitaryMatrix, Vec<f64>)> {
    let n = a.dim();
    let mut w = a.as_matrix().clone();
    let mut q = CMatrix::identity(n);
    let scale = w.frobenius_norm();
    if !scale.is_finite() {
        return Err(Error::Numerical("non-finite matrix entries".into()));
    }
    let target = (f64::EPSILON * scale).powi(2);

    let mut converged = n <= 1 || scale == 0.0;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut off = 0.0;
        for p in 0..n {
            for qi in (p + 1)..n {
                off += w[(p, qi)].norm_sqr();
            }
        }
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                jacobi_rotate(&mut w, &mut q, p, r);
            }
        }
    }
    if !converged {
        let mut off = 0.0;
        for p in 0..n {
            for r in (p + 1)..n {
                off += w[(p, r)].norm_sqr();
            }
        }
        if off > (1e-12 * scale).powi(2) {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge (off-diagonal {:.3e})",
                off.sqrt()
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(i, i)].re.total_cmp(&w[(j, j)].re));
    let values: Vec<f64> = order.iter().map(|&i| w[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| q[(i, order[j])]);
    Ok((UnitaryMatrix { m: vectors }, values))
}

fn jacobi_rotate(w: &mut CMatrix, q: &mut CMatrix, p: usize, r: usize) {
    let apr = w[(p, r)];
    let mag = apr.norm();
    if mag == 0.0 {
        return;
    }
    let n = w.rows();
    let phase_conj = (apr / mag).conj();
    let app = w[(p, p)].re;
    let arr = w[(r, r)].re;
    let theta = (arr - app) / (2.0 * mag);
    let t = if theta.is_infinite() {
        0.0
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    // G = diag(1, e^{-iφ}) · [[c, s], [-s, c]] acting on coordinates (p, r).
    let g_pp = C64::new(c, 0.0);
    let g_pr = C64::new(s, 0.0);
    let g_rp = phase_conj * (-s);
    let g_rr = phase_conj * c;

    for k in 0..n {
        let akp = w[(k, p)];
        let akr = w[(k, r)];
        w[(k, p)] = akp * g_pp + akr * g_rp;
        w[(k, r)] = akp * g_pr + akr * g_rr;
    }
    for k in 0..n {
        let apk = w[(p, k)];
        let ark = w[(r, k)];
        w[(p, k)] = g_pp.conj() * apk + g_rp.conj() * ark;
        w[(r, k)] = g_pr.conj() * apk + g_rr.conj() * ark;
    }
    w[(p, r)] = ZERO;
    w[(r, p)] = ZERO;
    w[(p, p)] = C64::new(w[(p, p)].re, 0.0);
    w[(r, r)] = C64::new(w[(r, r)].re, 0.0);

    for k in 0..n {
        let qkp = q[(k, p)];
        let qkr = q[(k, r)];
        q[(k, p)] = qkp * g_pp + qkr * g_rp;
        q[(k, r)] = qkp * g_pr + qkr * g_rr;
    }
}

pub fn min_eigenvalue(a: &HermitianMatrix) -> Result<f64> {
    let (_, values) = eig_hermitian(a)?;
    Ok(values.first().copied().unwrap_or(0.0))
}

/// True iff the smallest eigenvalue is `≥ -tol`.
pub fn psd_check(a: &HermitianMatrix, tol: f64) -> Result<bool> {
    Ok(min_eigenvalue(a)? >= -tol)
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues clipped to 0.
pub fn project_psd(a: &HermitianMatrix) -> Result<HermitianMatrix> {
    let (q, values) = eig_hermitian(a)?;
    if values.iter().all(|&v| v >= 0.0) {
        return Ok(a.clone());
    }
    let clipped: Vec<f64> = values.iter().map(|&v| v.max(0.0)).collect();
    Ok(HermitianMatrix::from_eigen(&q, &clipped))
}

/// Number of eigenvalues whose magnitude exceeds `rel · ‖A‖_max`.
pub fn numerical_rank(a: &HermitianMatrix, rel: f64) -> Result<usize> {
    let (_, values) = eig_hermitian(a)?;
    let thresh = rel * a.max_abs();
    Ok(values.iter().filter(|v| v.abs() > thresh).count())
}
