//! Dense complex linear algebra.
//!
//! Everything here is row-major and deterministic: products accumulate over
//! the inner index left to right, so identical inputs give bitwise-identical
//! outputs. Hermitian positive-definite inversion and log-determinants go
//! through a Cholesky factorization; there is no general LU.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Relative pivot floor for the Cholesky factorization.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Relative tolerance on the anti-Hermitian part of inputs that must be Hermitian.
pub const HERMITIAN_TOLERANCE: f64 = 1e-9;

/// Dense complex matrix stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "ComplexMatrix::new",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
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
        Self { rows, cols, data }
    }

    /// Builds a matrix from real row vectors; panics on ragged input.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        Self::from_fn(r, c, |i, j| C64::new(rows[i][j], 0.0))
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn map(&self, mut f: impl FnMut(C64) -> C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        self.check_same_shape(other, op)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Entrywise (Hadamard) product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    pub fn scale_complex(&self, s: C64) -> Self {
        self.map(|z| z * s)
    }

    /// `self += s * other`, entrywise.
    pub fn axpy(&mut self, s: C64, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Sum of entry magnitudes (entrywise l1 norm).
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `Re tr(self^H other)`, the real Frobenius inner product.
    pub fn real_inner(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "real_inner: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(mul_nn(self, other))
    }

    /// `self^H · other` without materialising the adjoint.
    pub fn adjoint_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch {
                op: "adjoint_matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(mul_hn(self, other))
    }

    /// `self · other^H` without materialising the adjoint.
    pub fn matmul_adjoint(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                op: "matmul_adjoint",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(mul_nh(self, other))
    }

    /// Largest anti-Hermitian deviation `max |m_ij - conj(m_ji)|`.
    pub fn hermitian_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Splits a block-diagonal matrix into its `P` diagonal blocks.
    pub fn extract_blocks(&self, structure: &BlockStructure) -> Result<Vec<ComplexMatrix>> {
        if self.shape() != structure.shape() {
            return Err(Error::DimensionMismatch {
                op: "extract_blocks",
                left: self.shape(),
                right: structure.shape(),
            });
        }
        let (n, l) = (structure.block_rows, structure.block_cols);
        Ok((0..structure.panels)
            .map(|p| ComplexMatrix::from_fn(n, l, |i, j| self[(p * n + i, p * l + j)]))
            .collect())
    }

    /// Zeroes every entry outside the block-diagonal support.
    pub fn masked(&self, structure: &BlockStructure) -> Self {
        let mut out = self.clone();
        out.apply_mask(structure);
        out
    }

    pub fn apply_mask(&mut self, structure: &BlockStructure) {
        debug_assert_eq!(self.shape(), structure.shape());
        for i in 0..self.rows {
            for j in 0..self.cols {
                if !structure.on_block(i, j) {
                    self[(i, j)] = ZERO;
                }
            }
        }
    }
}

// Raw products; callers validate shapes.

pub(crate) fn mul_nn(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![ZERO; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a.data[i * k + p];
            if s == ZERO {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &x) in row.iter_mut().zip(brow) {
                *o += s * x;
            }
        }
    }
    ComplexMatrix { rows: m, cols: n, data: out }
}

pub(crate) fn mul_hn(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    // a is k x m, result is m x n
    let (k, m, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![ZERO; m * n];
    for p in 0..k {
        let brow = &b.data[p * n..(p + 1) * n];
        for i in 0..m {
            let s = a.data[p * m + i].conj();
            if s == ZERO {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &x) in row.iter_mut().zip(brow) {
                *o += s * x;
            }
        }
    }
    ComplexMatrix { rows: m, cols: n, data: out }
}

pub(crate) fn mul_nh(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    // a is m x k, b is n x k, result is m x n
    let (m, k, n) = (a.rows, a.cols, b.rows);
    let mut out = vec![ZERO; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut acc = ZERO;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y.conj();
            }
            out[i * n + j] = acc;
        }
    }
    ComplexMatrix { rows: m, cols: n, data: out }
}

/// Layout of a block-diagonal analog beamformer: `panels` blocks of
/// `block_rows x block_cols` on the diagonal of an `(N*P) x (L*P)` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStructure {
    pub panels: usize,
    pub block_rows: usize,
    pub block_cols: usize,
}

impl BlockStructure {
    pub fn new(panels: usize, block_rows: usize, block_cols: usize) -> Result<Self> {
        if panels == 0 || block_rows == 0 || block_cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "block structure needs positive sizes, got P={panels} N={block_rows} L={block_cols}"
            )));
        }
        Ok(Self {
            panels,
            block_rows,
            block_cols,
        })
    }

    /// Total antenna count `M = N*P`.
    pub fn total_rows(&self) -> usize {
        self.block_rows * self.panels
    }

    /// Total panel outputs `L*P`.
    pub fn total_cols(&self) -> usize {
        self.block_cols * self.panels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.total_rows(), self.total_cols())
    }

    /// Number of on-block entries, `N*L*P`.
    pub fn support_len(&self) -> usize {
        self.panels * self.block_rows * self.block_cols
    }

    /// Zero-based membership test `floor(i/N) == floor(j/L)`.
    #[inline]
    pub fn on_block(&self, i: usize, j: usize) -> bool {
        i / self.block_rows == j / self.block_cols
    }

    /// Iterates `(row, col)` of every on-block entry in row-major order.
    pub fn support(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (n, l) = (self.block_rows, self.block_cols);
        (0..self.total_rows()).flat_map(move |i| {
            let p = i / n;
            (p * l..(p + 1) * l).map(move |j| (i, j))
        })
    }

    /// Same block shape with `c` times as many panels.
    pub fn replicated(&self, c: usize) -> Self {
        Self {
            panels: self.panels * c,
            ..*self
        }
    }
}

/// Assembles `blkdiag{W_1, ..., W_P}`.
pub fn blkdiag_compose(blocks: &[ComplexMatrix], structure: &BlockStructure) -> Result<ComplexMatrix> {
    if blocks.len() != structure.panels {
        return Err(Error::InvalidArgument(format!(
            "expected {} blocks, got {}",
            structure.panels,
            blocks.len()
        )));
    }
    let (n, l) = (structure.block_rows, structure.block_cols);
    let mut out = ComplexMatrix::zeros(structure.total_rows(), structure.total_cols());
    for (p, block) in blocks.iter().enumerate() {
        if block.shape() != (n, l) {
            return Err(Error::DimensionMismatch {
                op: "blkdiag_compose",
                left: block.shape(),
                right: (n, l),
            });
        }
        for i in 0..n {
            for j in 0..l {
                out[(p * n + i, p * l + j)] = block[(i, j)];
            }
        }
    }
    Ok(out)
}

/// Kronecker product `a ⊗ b`.
pub fn kronecker(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (br, bc) = b.shape();
    ComplexMatrix::from_fn(a.rows * br, a.cols * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: ComplexMatrix,
}

impl Cholesky {
    /// Factors `m = L L^H`, reading only the lower triangle.
    ///
    /// Fails when a pivot falls below `PIVOT_TOLERANCE` times the largest
    /// diagonal entry of `m`.
    pub fn new(m: &ComplexMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                op: "cholesky",
                left: m.shape(),
                right: (m.cols, m.rows),
            });
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("cholesky input"));
        }
        let n = m.rows;
        let scale = (0..n).map(|i| m[(i, i)].re).fold(0.0, f64::max);
        let threshold = PIVOT_TOLERANCE * scale;
        let mut l = ComplexMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > threshold) || scale <= 0.0 {
                return Err(Error::IllConditioned { pivot: d, threshold });
            }
            let ljj = d.sqrt();
            l[(j, j)] = C64::new(ljj, 0.0);
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &ComplexMatrix {
        &self.l
    }

    /// Natural log-determinant, `2 Σ ln L_jj`.
    pub fn ln_det(&self) -> f64 {
        (0..self.l.rows).map(|j| self.l[(j, j)].re.ln()).sum::<f64>() * 2.0
    }

    /// Solves `m X = b`.
    pub fn solve(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        let n = self.l.rows;
        if b.rows != n {
            return Err(Error::DimensionMismatch {
                op: "cholesky solve",
                left: self.l.shape(),
                right: b.shape(),
            });
        }
        let mut x = b.clone();
        let cols = b.cols;
        // forward: L y = b
        for c in 0..cols {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)].re;
            }
            // back: L^H x = y
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= self.l[(k, i)].conj() * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)].re;
            }
        }
        Ok(x)
    }

    /// Explicit inverse, symmetrised so the result is exactly Hermitian.
    pub fn inverse(&self) -> ComplexMatrix {
        let n = self.l.rows;
        // L^{-1} by forward substitution, then X = L^{-H} L^{-1}.
        let mut linv = ComplexMatrix::zeros(n, n);
        for c in 0..n {
            linv[(c, c)] = C64::new(1.0 / self.l[(c, c)].re, 0.0);
            for i in (c + 1)..n {
                let mut s = ZERO;
                for k in c..i {
                    s -= self.l[(i, k)] * linv[(k, c)];
                }
                linv[(i, c)] = s / self.l[(i, i)].re;
            }
        }
        let mut x = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                // (L^{-H} L^{-1})_{ij} = Σ_k conj(linv_ki) linv_kj, k ≥ max(i,j)
                let mut s = ZERO;
                for k in i..n {
                    s += linv[(k, i)].conj() * linv[(k, j)];
                }
                x[(i, j)] = s;
                x[(j, i)] = s.conj();
            }
            x[(i, i)].im = 0.0;
        }
        x
    }
}

fn check_hermitian(m: &ComplexMatrix) -> Result<()> {
    let scale = m.as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let asym = m.hermitian_asymmetry();
    if asym > HERMITIAN_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    Ok(())
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
pub fn inverse_hermitian_pd(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_hermitian(m)?;
    Ok(Cholesky::new(m)?.inverse())
}

/// Natural log-determinant of a Hermitian positive-definite matrix.
pub fn ln_det_hermitian_pd(m: &ComplexMatrix) -> Result<f64> {
    check_hermitian(m)?;
    Ok(Cholesky::new(m)?.ln_det())
}

/// Log-determinant in the library-wide base (bits, base 2).
pub fn logdet_hermitian_pd(m: &ComplexMatrix) -> Result<f64> {
    Ok(ln_det_hermitian_pd(m)? / std::f64::consts::LN_2)
}

/// Eigenvalues of a Hermitian matrix in ascending order.
///
/// Runs cyclic Jacobi on the real symmetric embedding `[[Re, -Im], [Im, Re]]`,
/// whose spectrum is that of `m` with every eigenvalue doubled.
pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            op: "hermitian_eigenvalues",
            left: m.shape(),
            right: (m.cols, m.rows),
        });
    }
    let n = m.rows;
    let dim = 2 * n;
    let mut a = vec![0.0; dim * dim];
    for i in 0..n {
        for j in 0..n {
            // use the Hermitian part so a slightly asymmetric input still embeds symmetrically
            let z = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            a[i * dim + j] = z.re;
            a[(i + n) * dim + (j + n)] = z.re;
            a[(i + n) * dim + j] = z.im;
            a[i * dim + (j + n)] = -z.im;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..dim)
            .flat_map(|i| (0..dim).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * dim + j] * a[i * dim + j])
            .sum();
        let total: f64 = a.iter().map(|x| x * x).sum();
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = a[p * dim + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * dim + p];
                let aqq = a[q * dim + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = a[k * dim + p];
                    let akq = a[k * dim + q];
                    a[k * dim + p] = c * akp - s * akq;
                    a[k * dim + q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[p * dim + k];
                    let aqk = a[q * dim + k];
                    a[p * dim + k] = c * apk - s * aqk;
                    a[q * dim + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..dim).map(|i| a[i * dim + i]).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    Ok(eig.chunks(2).map(|pair| 0.5 * (pair[0] + pair[1])).collect())
}
