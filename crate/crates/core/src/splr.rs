//! The implicit "sparse plus low-rank" operator
//! `Z = sparse + sum_i scale_i U_i diag(sigma_i) V_i^T`.
//!
//! Products cost `O(nnz + sum_i r_i (m + n))`; the operator is never
//! densified on the solver path. Accumulation order is fixed (sparse entries
//! in storage order, then terms in insertion order), so single-threaded
//! results are bit-reproducible.

use crate::linalg::{axpy, dot, DenseMatrix, LinearOperator, LowRankFactors};
use crate::sparse::SparseCoo;

/// Upper bound on low-rank terms carried by one operator.
pub const MAX_TERMS: usize = 3;

#[derive(Clone, Debug)]
pub struct LowRankTerm {
    pub scale: f64,
    pub factors: LowRankFactors,
}

#[derive(Clone, Debug)]
pub struct SplrOperator {
    sparse: SparseCoo,
    terms: Vec<LowRankTerm>,
}

/// Counts scalar multiply-adds.
pub(crate) trait FlopCounter {
    fn add(&mut self, n: usize);
}

impl FlopCounter for () {
    #[inline(always)]
    fn add(&mut self, _n: usize) {}
}

impl FlopCounter for usize {
    #[inline(always)]
    fn add(&mut self, n: usize) {
        *self += n;
    }
}

impl SplrOperator {
    pub fn new(sparse: SparseCoo) -> Self {
        Self {
            sparse,
            terms: Vec::with_capacity(MAX_TERMS),
        }
    }

    /// Adds a scaled low-rank term. Zero-rank and zero-scale terms are skipped.
    ///
    /// Panics when dimensions disagree or the operator already holds
    /// [`MAX_TERMS`] terms.
    pub fn with_term(mut self, scale: f64, factors: LowRankFactors) -> Self {
        assert_eq!(
            (factors.nrows(), factors.ncols()),
            (self.sparse.nrows(), self.sparse.ncols()),
            "low-rank term dimensions must match the sparse part"
        );
        if scale == 0.0 || factors.rank() == 0 {
            return self;
        }
        assert!(self.terms.len() < MAX_TERMS, "at most {MAX_TERMS} low-rank terms");
        self.terms.push(LowRankTerm { scale, factors });
        self
    }

    pub fn sparse(&self) -> &SparseCoo {
        &self.sparse
    }

    pub fn terms(&self) -> &[LowRankTerm] {
        &self.terms
    }

    /// `Z v` together with the number of multiply-adds it took.
    pub fn apply_counted(&self, v: &[f64]) -> (Vec<f64>, usize) {
        let mut count = 0usize;
        let out = self.apply_impl(v, &mut count);
        (out, count)
    }

    fn apply_impl(&self, v: &[f64], counter: &mut impl FlopCounter) -> Vec<f64> {
        assert_eq!(v.len(), self.sparse.ncols(), "apply: vector length must equal cols");
        let mut out = vec![0.0; self.sparse.nrows()];
        for e in self.sparse.entries() {
            out[e.row] += e.value * v[e.col];
        }
        counter.add(self.sparse.nnz());
        for t in &self.terms {
            let f = &t.factors;
            let r = f.rank();
            // s = scale * Sigma (V^T v)
            let mut s = vec![0.0; r];
            for j in 0..f.ncols() {
                axpy(v[j], f.v().row(j), &mut s);
            }
            counter.add(f.ncols() * r);
            for (sl, &sig) in s.iter_mut().zip(f.sigma()) {
                *sl *= t.scale * sig;
            }
            counter.add(r);
            for (i, o) in out.iter_mut().enumerate() {
                *o += dot(f.u().row(i), &s);
            }
            counter.add(f.nrows() * r);
        }
        out
    }

    fn apply_transpose_impl(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.sparse.nrows(), "apply_transpose: vector length must equal rows");
        let mut out = vec![0.0; self.sparse.ncols()];
        for e in self.sparse.entries() {
            out[e.col] += e.value * u[e.row];
        }
        for t in &self.terms {
            let f = &t.factors;
            let r = f.rank();
            let mut s = vec![0.0; r];
            for i in 0..f.nrows() {
                axpy(u[i], f.u().row(i), &mut s);
            }
            for (sl, &sig) in s.iter_mut().zip(f.sigma()) {
                *sl *= t.scale * sig;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += dot(f.v().row(j), &s);
            }
        }
        out
    }

    /// Dense copy, for oracles and the exact-SVT baseline.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = self.sparse.to_dense();
        for t in &self.terms {
            let low = t.factors.to_dense();
            for (x, y) in d.as_mut_slice().iter_mut().zip(low.as_slice()) {
                *x += t.scale * y;
            }
        }
        d
    }
}

impl LinearOperator for SplrOperator {
    fn nrows(&self) -> usize {
        self.sparse.nrows()
    }

    fn ncols(&self) -> usize {
        self.sparse.ncols()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.apply_impl(v, &mut ())
    }

    fn apply_transpose(&self, u: &[f64]) -> Vec<f64> {
        self.apply_transpose_impl(u)
    }

    fn apply_block(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.nrows(), self.ncols(), "apply_block dimension mismatch");
        let k = b.ncols();
        let mut out = DenseMatrix::zeros(self.nrows(), k);
        for e in self.sparse.entries() {
            axpy(e.value, b.row(e.col), out.row_mut(e.row));
        }
        for t in &self.terms {
            // U (scale Sigma) (V^T B)
            let w = t.factors.v().t_matmul(b);
            let mut sig = t.factors.sigma().to_vec();
            sig.iter_mut().for_each(|s| *s *= t.scale);
            let add = t.factors.u().scale_columns(&sig).matmul(&w);
            axpy(1.0, add.as_slice(), out.as_mut_slice());
        }
        out
    }

    fn apply_transpose_block(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.nrows(), self.nrows(), "apply_transpose_block dimension mismatch");
        let k = b.ncols();
        let mut out = DenseMatrix::zeros(self.ncols(), k);
        for e in self.sparse.entries() {
            axpy(e.value, b.row(e.row), out.row_mut(e.col));
        }
        for t in &self.terms {
            let w = t.factors.u().t_matmul(b);
            let mut sig = t.factors.sigma().to_vec();
            sig.iter_mut().for_each(|s| *s *= t.scale);
            let add = t.factors.v().scale_columns(&sig).matmul(&w);
            axpy(1.0, add.as_slice(), out.as_mut_slice());
        }
        out
    }
}

/// The proximal-step argument `(1 + theta) X_t - theta X_prev - mu S`
/// of the accelerated iteration, kept in factored form.
pub fn build_accel_iterate(
    gradient: &SparseCoo,
    x_t: &LowRankFactors,
    x_prev: &LowRankFactors,
    theta: f64,
    mu: f64,
) -> SplrOperator {
    SplrOperator::new(gradient.scaled(-mu))
        .with_term(1.0 + theta, x_t.clone())
        .with_term(-theta, x_prev.clone())
}
