//! Dense small-matrix kernels, the power-method range finder and the
//! singular value thresholding (SVT) family.
//!
//! Everything that needs a full dense SVD goes through [`thin_svd`], which
//! delegates to faer's divide-and-conquer SVD. The large operators the solvers
//! work with are never densified on the fast path: they are only touched
//! through [`LinearOperator`] products, and the dense SVD is taken of the
//! `k x n` compression `Q^T Z`.

use crate::error::{Error, Result};

/// Orthonormality tolerance used when validating [`LowRankFactors`].
pub const FACTOR_ORTHO_TOL: f64 = 1e-8;

/// Relative column-norm threshold below which QR drops a column.
pub const QR_DROP_TOL: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a `rows x columns.len()` matrix from column vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Self {
        let cols = columns.len();
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), rows, "column length mismatch");
            for (i, &x) in c.iter().enumerate() {
                m.data[i * cols + j] = x;
            }
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(
            (self.rows, self.cols, other.cols),
            (&self.data, self.cols, 1),
            (&other.data, other.cols, 1),
            &mut out.data,
        );
        out
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, other.rows, "t_matmul dimension mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        gemm(
            (self.cols, self.rows, other.cols),
            (&self.data, 1, self.cols),
            (&other.data, other.cols, 1),
            &mut out.data,
        );
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self::from_row_major(self.rows, self.cols, data)
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self::from_row_major(self.rows, self.cols, data)
    }

    pub fn scaled(&self, s: f64) -> DenseMatrix {
        let data = self.data.iter().map(|a| a * s).collect();
        Self::from_row_major(self.rows, self.cols, data)
    }

    /// Multiplies column `j` by `s[j]`.
    pub fn scale_columns(&self, s: &[f64]) -> DenseMatrix {
        assert_eq!(s.len(), self.cols);
        let mut out = self.clone();
        for i in 0..self.rows {
            for (x, &f) in out.row_mut(i).iter_mut().zip(s) {
                *x *= f;
            }
        }
        out
    }

    /// `[self, other]`.
    pub fn hcat(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, other.rows, "hcat row mismatch");
        let cols = self.cols + other.cols;
        let mut out = Self::zeros(self.rows, cols);
        for i in 0..self.rows {
            out.data[i * cols..i * cols + self.cols].copy_from_slice(self.row(i));
            out.data[i * cols + self.cols..(i + 1) * cols].copy_from_slice(other.row(i));
        }
        out
    }

    pub fn select_columns(&self, idx: &[usize]) -> DenseMatrix {
        DenseMatrix::from_fn(self.rows, idx.len(), |i, j| self.get(i, idx[j]))
    }

    pub fn leading_columns(&self, k: usize) -> DenseMatrix {
        let k = k.min(self.cols);
        DenseMatrix::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    /// `||self^T self - I||_F`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.t_matmul(self);
        g.sub(&DenseMatrix::identity(self.cols)).frobenius_norm()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

}

/// `C = A B` for an `m x k` operand `A` and a `k x n` operand `B`, each given
/// as storage plus (row, column) strides; `C` is row-major `m x n`.
fn gemm(dims: (usize, usize, usize), a: (&[f64], usize, usize), b: (&[f64], usize, usize), c: &mut [f64]) {
    let (m, k, n) = dims;
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.0.len() >= span(m, k, a.1, a.2) && b.0.len() >= span(k, n, b.1, b.2));
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub(crate) fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// An implicit `m x n` matrix accessed only through products.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;

    /// `Z v` for `v` of length `ncols()`.
    fn apply(&self, v: &[f64]) -> Vec<f64>;

    /// `Z^T u` for `u` of length `nrows()`.
    fn apply_transpose(&self, u: &[f64]) -> Vec<f64>;

    /// `Z B` for `B` with `ncols()` rows.
    fn apply_block(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.nrows(), self.ncols(), "apply_block dimension mismatch");
        let cols: Vec<Vec<f64>> = b.columns().iter().map(|c| self.apply(c)).collect();
        DenseMatrix::from_columns(self.nrows(), &cols)
    }

    /// `Z^T B` for `B` with `nrows()` rows.
    fn apply_transpose_block(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.nrows(), self.nrows(), "apply_transpose_block dimension mismatch");
        let cols: Vec<Vec<f64>> = b
            .columns()
            .iter()
            .map(|c| self.apply_transpose(c))
            .collect();
        DenseMatrix::from_columns(self.ncols(), &cols)
    }
}

impl LinearOperator for DenseMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "apply dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    fn apply_transpose(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.rows, "apply_transpose dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &ui) in u.iter().enumerate() {
            axpy(ui, self.row(i), &mut out);
        }
        out
    }

    fn apply_block(&self, b: &DenseMatrix) -> DenseMatrix {
        self.matmul(b)
    }

    fn apply_transpose_block(&self, b: &DenseMatrix) -> DenseMatrix {
        self.t_matmul(b)
    }
}

/// Thin SVD `U diag(sigma) V^T` with `sigma` sorted non-increasing.
///
/// Sign convention: the largest-magnitude entry of each left singular vector
/// is non-negative (ties go to the lowest row index); the matching right
/// vector is flipped along with it.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

pub fn thin_svd(a: &DenseMatrix) -> ThinSvd {
    let (m, n) = (a.nrows(), a.ncols());
    let k = m.min(n);
    if k == 0 {
        return ThinSvd {
            u: DenseMatrix::zeros(m, 0),
            sigma: Vec::new(),
            v: DenseMatrix::zeros(n, 0),
        };
    }
    let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a.get(i, j));
    let svd = fa.thin_svd().expect("SVD of a finite matrix converges");
    let (u, v) = (svd.U(), svd.V());
    let s: Vec<f64> = (0..k).map(|i| svd.S().column_vector()[i]).collect();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| s[y].total_cmp(&s[x]));

    let mut uu = DenseMatrix::zeros(m, k);
    let mut vv = DenseMatrix::zeros(n, k);
    let mut sigma = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let mut pivot = 0;
        let mut best = -1.0;
        for i in 0..m {
            let a = u[(i, src)].abs();
            if a > best {
                best = a;
                pivot = i;
            }
        }
        let sign = if u[(pivot, src)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            uu.set(i, dst, sign * u[(i, src)]);
        }
        for j in 0..n {
            vv.set(j, dst, sign * v[(j, src)]);
        }
        sigma.push(s[src].max(0.0));
    }
    ThinSvd {
        u: uu,
        sigma,
        v: vv,
    }
}

/// Matrix with orthonormal columns spanning a range.
#[derive(Clone, Debug)]
pub struct OrthonormalBasis {
    pub q: DenseMatrix,
}

impl OrthonormalBasis {
    pub fn rank(&self) -> usize {
        self.q.ncols()
    }
}

/// Columns per panel in [`qr_orthonormalize`].
const QR_PANEL: usize = 32;

/// Orthonormalizes the columns of `m` by Gram-Schmidt with one full
/// reorthogonalization pass, blocked so that projections against the basis
/// built so far run as matrix products.
///
/// Columns whose residual norm falls to `QR_DROP_TOL` times the largest input
/// column norm are treated as dependent and dropped, so the basis can have
/// fewer columns than the input. An all-zero input yields a zero-column basis.
pub fn qr_orthonormalize(m: &DenseMatrix) -> OrthonormalBasis {
    let rows = m.nrows();
    let cols = m.columns();
    let scale = cols.iter().map(|c| norm2(c)).fold(0.0, f64::max);
    // Column-major storage of the accepted basis vectors.
    let mut basis: Vec<f64> = Vec::new();
    let mut r = 0;
    if scale > 0.0 && scale.is_finite() && rows > 0 {
        let tol = QR_DROP_TOL * scale;
        for chunk in cols.chunks(QR_PANEL) {
            if r == rows {
                break;
            }
            let b = chunk.len();
            let mut panel: Vec<f64> = chunk.concat();
            if r > 0 {
                for _pass in 0..2 {
                    // panel -= Q (Q^T panel); both are column-major.
                    let mut w = vec![0.0; b * r];
                    gemm((b, rows, r), (&panel, rows, 1), (&basis, 1, rows), &mut w);
                    let mut proj = vec![0.0; b * rows];
                    gemm((b, r, rows), (&w, r, 1), (&basis, rows, 1), &mut proj);
                    panel.iter_mut().zip(&proj).for_each(|(p, q)| *p -= q);
                }
            }
            let first = r;
            for v in panel.chunks_mut(rows) {
                if r == rows {
                    break;
                }
                for _pass in 0..2 {
                    for q in basis[first * rows..].chunks(rows) {
                        let c = dot(q, v);
                        axpy(-c, q, v);
                    }
                }
                let nrm = norm2(v);
                if nrm > tol {
                    v.iter_mut().for_each(|x| *x /= nrm);
                    basis.extend_from_slice(v);
                    r += 1;
                }
            }
        }
    }
    let columns: Vec<Vec<f64>> = basis.chunks(rows.max(1)).map(|c| c.to_vec()).collect();
    OrthonormalBasis {
        q: DenseMatrix::from_columns(rows, &columns),
    }
}

/// Block power method (subspace iteration) seeded with `r`.
///
/// Returns `Q_J` where `Q_0 = QR(Z R)` and `Q_j = QR(Z (Z^T Q_{j-1}))`.
/// A block wider than `min(m, n)` is clamped to its leading columns.
pub fn power_method<Z: LinearOperator + ?Sized>(
    z: &Z,
    r: &DenseMatrix,
    iterations: usize,
) -> OrthonormalBasis {
    assert_eq!(r.nrows(), z.ncols(), "power_method: R must have ncols(Z) rows");
    assert!(r.ncols() >= 1, "power_method: R needs at least one column");
    let kmax = z.nrows().min(z.ncols());
    let r = if r.ncols() > kmax {
        r.leading_columns(kmax)
    } else {
        r.clone()
    };
    let mut q = qr_orthonormalize(&z.apply_block(&r));
    for _ in 0..iterations {
        if q.rank() == 0 {
            break;
        }
        let w = z.apply_transpose_block(&q.q);
        q = qr_orthonormalize(&z.apply_block(&w));
    }
    q
}

/// Thin factorization `U diag(sigma) V^T` of a low-rank iterate.
///
/// `U` and `V` have orthonormal columns and `sigma` is strictly positive and
/// non-increasing. Rank zero encodes the zero matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankFactors {
    u: DenseMatrix,
    sigma: Vec<f64>,
    v: DenseMatrix,
}

impl LowRankFactors {
    /// Validating constructor.
    pub fn new(u: DenseMatrix, sigma: Vec<f64>, v: DenseMatrix) -> Result<Self> {
        let k = sigma.len();
        if u.ncols() != k || v.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "factor widths {} and {} do not match {} singular values",
                u.ncols(),
                v.ncols(),
                k
            )));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(
                "singular values must be finite and strictly positive".into(),
            ));
        }
        if sigma.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument(
                "singular values must be non-increasing".into(),
            ));
        }
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::InvalidArgument("factors must be finite".into()));
        }
        let (eu, ev) = (u.orthonormality_error(), v.orthonormality_error());
        if eu > FACTOR_ORTHO_TOL || ev > FACTOR_ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "factor columns are not orthonormal (U error {eu:.2e}, V error {ev:.2e})"
            )));
        }
        Ok(Self { u, sigma, v })
    }

    pub(crate) fn from_parts_unchecked(u: DenseMatrix, sigma: Vec<f64>, v: DenseMatrix) -> Self {
        debug_assert_eq!(u.ncols(), sigma.len());
        debug_assert_eq!(v.ncols(), sigma.len());
        Self { u, sigma, v }
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            u: DenseMatrix::zeros(rows, 0),
            sigma: Vec::new(),
            v: DenseMatrix::zeros(cols, 0),
        }
    }

    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.sigma.iter().sum()
    }

    /// `U diag(sigma)`.
    pub fn scaled_u(&self) -> DenseMatrix {
        self.u.scale_columns(&self.sigma)
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (ui, vj) = (self.u.row(i), self.v.row(j));
        let mut acc = 0.0;
        for l in 0..self.sigma.len() {
            acc += ui[l] * self.sigma[l] * vj[l];
        }
        acc
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.scaled_u().matmul(&self.v.transpose())
    }

    /// Keeps the leading `k` triples.
    pub fn truncated(&self, k: usize) -> Self {
        if k >= self.rank() {
            return self.clone();
        }
        Self {
            u: self.u.leading_columns(k),
            sigma: self.sigma[..k].to_vec(),
            v: self.v.leading_columns(k),
        }
    }
}

/// Applies per-index shrinkage to an SVD, keeping indices whose shrunk value
/// is strictly positive.
fn shrink(svd: ThinSvd, shrink_by: impl Fn(usize) -> f64) -> LowRankFactors {
    let keep: Vec<usize> = (0..svd.sigma.len())
        .filter(|&i| svd.sigma[i] - shrink_by(i) > 0.0)
        .collect();
    let sigma = keep.iter().map(|&i| svd.sigma[i] - shrink_by(i)).collect();
    LowRankFactors::from_parts_unchecked(
        svd.u.select_columns(&keep),
        sigma,
        svd.v.select_columns(&keep),
    )
}

/// Exact singular value thresholding: the minimizer of
/// `1/2 ||X - Z||_F^2 + lambda ||X||_*`.
///
/// Only triples with `sigma_i > lambda` (strictly) survive.
pub fn svt_dense(z: &DenseMatrix, lambda: f64) -> LowRankFactors {
    assert!(lambda >= 0.0, "svt threshold must be non-negative");
    shrink(thin_svd(z), |_| lambda)
}

fn check_weights(w: &[f64], needed: usize) -> Result<()> {
    if w.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "{} weights supplied for {} singular values",
            w.len(),
            needed
        )));
    }
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidArgument(
            "weights must be finite and non-negative".into(),
        ));
    }
    if w.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::InvalidArgument("weights must be non-decreasing".into()));
    }
    Ok(())
}

/// Proximal step of the weighted nuclear norm `lambda * sum_i w_i sigma_i(X)`
/// for non-decreasing weights: `U [Sigma - lambda diag(w)]_+ V^T`.
pub fn weighted_svt_dense(z: &DenseMatrix, lambda: f64, w: &[f64]) -> Result<LowRankFactors> {
    let svd = thin_svd(z);
    check_weights(w, svd.sigma.len())?;
    Ok(shrink(svd, |i| lambda * w[i]))
}

/// Result of a compressed (range-finder) SVT.
#[derive(Clone, Debug)]
pub struct ApproxSvt {
    pub factors: LowRankFactors,
    /// Every singular value of `Q^T Z`, before thresholding.
    pub candidates: Vec<f64>,
    /// Width of the range basis `Q`.
    pub basis_rank: usize,
}

impl ApproxSvt {
    /// True when every candidate survived thresholding, i.e. the basis may be
    /// too narrow to contain all singular values above the threshold.
    pub fn saturated(&self) -> bool {
        self.basis_rank > 0 && self.factors.rank() == self.candidates.len()
    }
}

fn compressed_prox<Z: LinearOperator + ?Sized>(
    z: &Z,
    r: &DenseMatrix,
    iterations: usize,
    shrink_by: &dyn Fn(usize) -> f64,
) -> ApproxSvt {
    let q = power_method(z, r, iterations);
    if q.rank() == 0 {
        return ApproxSvt {
            factors: LowRankFactors::zero(z.nrows(), z.ncols()),
            candidates: Vec::new(),
            basis_rank: 0,
        };
    }
    // (Z^T Q)^T = Q^T Z, a k x n matrix; its SVD is taken on the n x k transpose.
    let ztq = z.apply_transpose_block(&q.q);
    let small = thin_svd(&ztq);
    // ztq = V S W^T  =>  Q^T Z = W S V^T
    let candidates = small.sigma.clone();
    let svd = ThinSvd {
        u: q.q.matmul(&small.v),
        sigma: small.sigma,
        v: small.u,
    };
    let svd = renormalize_signs(svd);
    ApproxSvt {
        factors: shrink(svd, shrink_by),
        candidates,
        basis_rank: q.rank(),
    }
}

fn renormalize_signs(mut svd: ThinSvd) -> ThinSvd {
    let (m, n) = (svd.u.nrows(), svd.v.nrows());
    for l in 0..svd.sigma.len() {
        let mut pivot = 0;
        let mut best = -1.0;
        for i in 0..m {
            let a = svd.u.get(i, l).abs();
            if a > best {
                best = a;
                pivot = i;
            }
        }
        if svd.u.get(pivot, l) < 0.0 {
            for i in 0..m {
                svd.u.set(i, l, -svd.u.get(i, l));
            }
            for j in 0..n {
                svd.v.set(j, l, -svd.v.get(j, l));
            }
        }
    }
    svd
}

/// Approximate SVT: range-find with the power method, then threshold the SVD
/// of the small matrix `Q^T Z`. Returns `(Q U, (Sigma - lambda)_+, V)`.
pub fn approx_svt<Z: LinearOperator + ?Sized>(
    z: &Z,
    r: &DenseMatrix,
    lambda: f64,
    iterations: usize,
) -> LowRankFactors {
    approx_svt_detailed(z, r, lambda, iterations).factors
}

pub fn approx_svt_detailed<Z: LinearOperator + ?Sized>(
    z: &Z,
    r: &DenseMatrix,
    lambda: f64,
    iterations: usize,
) -> ApproxSvt {
    assert!(lambda >= 0.0, "svt threshold must be non-negative");
    compressed_prox(z, r, iterations, &|_| lambda)
}

/// Weighted analogue of [`approx_svt_detailed`]; `w` must hold at least as
/// many non-decreasing weights as the range basis has columns.
pub fn approx_weighted_svt<Z: LinearOperator + ?Sized>(
    z: &Z,
    r: &DenseMatrix,
    lambda: f64,
    w: &[f64],
    iterations: usize,
) -> Result<ApproxSvt> {
    let kmax = r.ncols().min(z.nrows()).min(z.ncols());
    check_weights(w, kmax)?;
    Ok(compressed_prox(z, r, iterations, &|i| lambda * w[i]))
}

/// Duality gap of `X` as a solution of `min_X 1/2 ||X - Z||_F^2 + lambda ||X||_*`.
///
/// The dual optimum is `W* = U min(Sigma, lambda) V^T` from the full SVD of
/// `Z`, with dual objective `tr(W^T Z) - 1/2 ||W||_F^2` over
/// `||W||_2 <= lambda`. The gap is zero exactly at `X = svt(Z, lambda)`.
pub fn svt_dual_certificate(z: &DenseMatrix, lambda: f64, x: &LowRankFactors) -> f64 {
    assert_eq!((z.nrows(), z.ncols()), (x.nrows(), x.ncols()));
    let primal = 0.5 * x.to_dense().sub(z).frobenius_norm().powi(2) + lambda * x.nuclear_norm();
    let s = thin_svd(z).sigma;
    let dual: f64 = s
        .iter()
        .map(|&si| {
            let w = si.min(lambda);
            w * si - 0.5 * w * w
        })
        .sum();
    (primal - dual).max(0.0)
}

/// Estimates the largest singular value of an operator with a few power
/// iterations from a seeded random start.
pub fn spectral_norm_estimate<Z: LinearOperator + ?Sized>(
    z: &Z,
    iterations: usize,
    rng: &mut crate::rng::Rng,
) -> f64 {
    let n = z.ncols();
    if n == 0 || z.nrows() == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|_| crate::rng::standard_normal(rng)).collect();
    let mut est = 0.0;
    for _ in 0..iterations.max(1) {
        let nv = norm2(&v);
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let u = z.apply(&v);
        est = norm2(&u);
        v = z.apply_transpose(&u);
    }
    est
}
