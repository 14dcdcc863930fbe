//! Tensor completion with the scaled latent nuclear norm.
//!
//! The estimate is a sum `X = sum_d X^d` of latent tensors, each low-rank in
//! its own mode-`d` unfolding and penalized by `lambda_d ||X^d_<d>||_*`. The
//! proximal step separates over modes, so an iteration is `D` matrix SVTs on
//! unfolded operators `Y^d - mu S` where `S` is one sparse gradient tensor
//! shared by all modes. The unfoldings are never formed: each observed entry
//! carries its precomputed `(row, col)` position in every mode.
//!
//! Index convention: 0-based everywhere, with the first index varying
//! fastest in unfolded columns and in [`DenseTensor`] storage.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, svt_dense, DenseMatrix, LinearOperator, LowRankFactors};
use crate::loss::LossKind;
use crate::rng::seeded;
use crate::solver::{approximate_prox, IterationRecord, Penalty, SolverConfig, SolverTrace, SvdMode};

/// Largest supported tensor order.
pub const MAX_ORDER: usize = 8;

fn checked_product(it: impl IntoIterator<Item = usize>) -> Result<usize> {
    it.into_iter().try_fold(1usize, |acc, x| {
        acc.checked_mul(x)
            .ok_or_else(|| Error::InvalidArgument("tensor dimensions overflow the index type".into()))
    })
}

/// Number of columns `prod_{j != d} I_j` of the mode-`d` unfolding.
pub fn mode_cols(dims: &[usize], d: usize) -> Result<usize> {
    checked_product(dims.iter().enumerate().filter(|&(j, _)| j != d).map(|(_, &x)| x))
}

/// Position of a tensor entry in the mode-`d` unfolding, 0-based:
/// `row = i_d`, `col = sum_{l != d} i_l prod_{m < l, m != d} I_m`.
pub fn mode_index_map(dims: &[usize], idx: &[usize], d: usize) -> (usize, usize) {
    assert_eq!(idx.len(), dims.len(), "index order mismatch");
    assert!(d < dims.len(), "mode out of range");
    let mut col = 0;
    let mut stride = 1;
    for (l, (&i, &n)) in idx.iter().zip(dims).enumerate() {
        assert!(i < n, "index {i} out of range for mode {l} of size {n}");
        if l != d {
            col += i * stride;
            stride *= n;
        }
    }
    (idx[d], col)
}

/// Inverse of [`mode_index_map`].
pub fn mode_index_unmap(dims: &[usize], d: usize, row: usize, mut col: usize) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    idx[d] = row;
    for (l, &n) in dims.iter().enumerate() {
        if l != d {
            idx[l] = col % n;
            col /= n;
        }
    }
    idx
}

/// Sparse tensor with entries sorted lexicographically by index tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensorCoo {
    dims: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseTensorCoo {
    pub fn from_entries(dims: &[usize], entries: impl IntoIterator<Item = (Vec<usize>, f64)>) -> Result<Self> {
        if dims.len() < 2 || dims.len() > MAX_ORDER {
            return Err(Error::InvalidArgument(format!(
                "tensor order must be between 2 and {MAX_ORDER}, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("tensor dimensions must be positive".into()));
        }
        checked_product(dims.iter().copied())?;
        let mut list: Vec<(Vec<usize>, f64)> = entries.into_iter().collect();
        for (idx, v) in &list {
            if idx.len() != dims.len() || idx.iter().zip(dims).any(|(&i, &n)| i >= n) {
                return Err(Error::InvalidArgument(format!("index {idx:?} outside tensor of dims {dims:?}")));
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("entry {idx:?} is not finite")));
            }
        }
        list.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = list.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument(format!("duplicate entry {:?}", w[0].0)));
        }
        let mut indices = Vec::with_capacity(list.len() * dims.len());
        let mut values = Vec::with_capacity(list.len());
        for (idx, v) in list {
            indices.extend(idx);
            values.push(v);
        }
        Ok(Self {
            dims: dims.to_vec(),
            indices,
            values,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, e: usize) -> &[usize] {
        let d = self.dims.len();
        &self.indices[e * d..(e + 1) * d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        (0..self.nnz()).map(move |e| (self.index(e), self.values[e]))
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "value count mismatch");
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn get(&self, idx: &[usize]) -> Option<f64> {
        let (mut lo, mut hi) = (0, self.nnz());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.index(mid).cmp(idx) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(self.values[mid]),
            }
        }
        None
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut t = DenseTensor::zeros(&self.dims);
        for (idx, v) in self.iter() {
            t.set(idx, v);
        }
        t
    }
}

/// Dense tensor, first index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        for k in 0..t.data.len() {
            let idx = t.unravel(k);
            t.data[k] = f(&idx);
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        let mut off = 0;
        let mut stride = 1;
        for (&i, &n) in idx.iter().zip(&self.dims) {
            assert!(i < n, "tensor index out of range");
            off += i * stride;
            stride *= n;
        }
        off
    }

    pub fn unravel(&self, mut k: usize) -> Vec<usize> {
        self.dims
            .iter()
            .map(|&n| {
                let i = k % n;
                k /= n;
                i
            })
            .collect()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let k = self.offset(idx);
        self.data[k] = v;
    }

    pub fn add(&self, other: &DenseTensor) -> DenseTensor {
        assert_eq!(self.dims, other.dims);
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Mode-`d` unfolding as a dense matrix.
pub fn matricize(t: &DenseTensor, d: usize) -> DenseMatrix {
    let cols = mode_cols(t.dims(), d).expect("dense tensor dims fit in memory");
    let mut m = DenseMatrix::zeros(t.dims()[d], cols);
    for k in 0..t.as_slice().len() {
        let idx = t.unravel(k);
        let (r, c) = mode_index_map(t.dims(), &idx, d);
        m.set(r, c, t.as_slice()[k]);
    }
    m
}

/// Folds a mode-`d` unfolding back into a tensor of shape `dims`.
pub fn tensorize(m: &DenseMatrix, dims: &[usize], d: usize) -> DenseTensor {
    let cols = mode_cols(dims, d).expect("dims fit in memory");
    assert_eq!((m.nrows(), m.ncols()), (dims[d], cols), "unfolding shape mismatch");
    DenseTensor::from_fn(dims, |idx| {
        let (r, c) = mode_index_map(dims, idx, d);
        m.get(r, c)
    })
}

/// Positions of a sparse tensor's entries in one mode's unfolding, in entry
/// order.
#[derive(Clone, Debug)]
pub struct ModePattern {
    pub mode: usize,
    pub nrows: usize,
    pub ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl ModePattern {
    pub fn new(t: &SparseTensorCoo, d: usize) -> Result<Self> {
        let ncols = mode_cols(t.dims(), d)?;
        let (rows, cols) = (0..t.nnz()).map(|e| mode_index_map(t.dims(), t.index(e), d)).unzip();
        Ok(Self {
            mode: d,
            nrows: t.dims()[d],
            ncols,
            rows,
            cols,
        })
    }

    pub fn position(&self, e: usize) -> (usize, usize) {
        (self.rows[e], self.cols[e])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Mode-`d` unfolding of `sparse + sum_k scale_k X_k`, applied without
/// forming the unfolding. `values` follow the entry order of the pattern.
pub struct ModeUnfoldOperator<'a> {
    pattern: &'a ModePattern,
    values: Vec<f64>,
    terms: Vec<(f64, &'a LowRankFactors)>,
}

impl<'a> ModeUnfoldOperator<'a> {
    pub fn new(pattern: &'a ModePattern, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), pattern.len(), "value count mismatch");
        Self {
            pattern,
            values,
            terms: Vec::new(),
        }
    }

    pub fn mode(&self) -> usize {
        self.pattern.mode
    }

    /// Adds `scale * X` in mode-`d` coordinates; zero terms are skipped.
    pub fn with_term(mut self, scale: f64, x: &'a LowRankFactors) -> Self {
        assert_eq!(
            (x.nrows(), x.ncols()),
            (self.pattern.nrows, self.pattern.ncols),
            "low-rank term does not match the unfolding"
        );
        if scale != 0.0 && x.rank() > 0 {
            self.terms.push((scale, x));
        }
        self
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.pattern.nrows, self.pattern.ncols);
        for (e, &v) in self.values.iter().enumerate() {
            let (r, c) = self.pattern.position(e);
            out.set(r, c, out.get(r, c) + v);
        }
        for &(s, x) in &self.terms {
            out = out.add(&x.to_dense().scaled(s));
        }
        out
    }
}

/// `Z v` for a mode unfolding.
pub fn unfold_apply(z: &ModeUnfoldOperator<'_>, v: &[f64]) -> Vec<f64> {
    z.apply(v)
}

impl LinearOperator for ModeUnfoldOperator<'_> {
    fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.pattern.ncols, "apply dimension mismatch");
        let mut out = vec![0.0; self.pattern.nrows];
        for (e, &val) in self.values.iter().enumerate() {
            let (r, c) = self.pattern.position(e);
            out[r] += val * v[c];
        }
        for &(s, x) in &self.terms {
            let w = x.v().apply_transpose(v);
            let w: Vec<f64> = w.iter().zip(x.sigma()).map(|(a, b)| s * a * b).collect();
            let add = x.u().apply(&w);
            axpy(1.0, &add, &mut out);
        }
        out
    }

    fn apply_transpose(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.pattern.nrows, "apply_transpose dimension mismatch");
        let mut out = vec![0.0; self.pattern.ncols];
        for (e, &val) in self.values.iter().enumerate() {
            let (r, c) = self.pattern.position(e);
            out[c] += val * u[r];
        }
        for &(s, x) in &self.terms {
            let w = x.u().apply_transpose(u);
            let w: Vec<f64> = w.iter().zip(x.sigma()).map(|(a, b)| s * a * b).collect();
            let add = x.v().apply(&w);
            axpy(1.0, &add, &mut out);
        }
        out
    }

    fn apply_block(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.nrows(), self.pattern.ncols, "apply_block dimension mismatch");
        let mut out = DenseMatrix::zeros(self.pattern.nrows, b.ncols());
        for (e, &val) in self.values.iter().enumerate() {
            let (r, c) = self.pattern.position(e);
            axpy(val, b.row(c), out.row_mut(r));
        }
        for &(s, x) in &self.terms {
            let mut sigma: Vec<f64> = x.sigma().to_vec();
            sigma.iter_mut().for_each(|v| *v *= s);
            let inner = x.v().t_matmul(b);
            out = out.add(&x.u().scale_columns(&sigma).matmul(&inner));
        }
        out
    }

    fn apply_transpose_block(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.nrows(), self.pattern.nrows, "apply_transpose_block dimension mismatch");
        let mut out = DenseMatrix::zeros(self.pattern.ncols, b.ncols());
        for (e, &val) in self.values.iter().enumerate() {
            let (r, c) = self.pattern.position(e);
            axpy(val, b.row(r), out.row_mut(c));
        }
        for &(s, x) in &self.terms {
            let mut sigma: Vec<f64> = x.sigma().to_vec();
            sigma.iter_mut().for_each(|v| *v *= s);
            let inner = x.u().t_matmul(b);
            out = out.add(&x.v().scale_columns(&sigma).matmul(&inner));
        }
        out
    }
}

/// Latent decomposition `X = sum_d X^d`, with mode `d` stored as factors of
/// its `I_d x prod_{j != d} I_j` unfolding. Rank zero marks an inactive mode.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDecomposition {
    dims: Vec<usize>,
    modes: Vec<LowRankFactors>,
}

impl LatentDecomposition {
    pub fn zero(dims: &[usize]) -> Result<Self> {
        let modes = (0..dims.len())
            .map(|d| Ok(LowRankFactors::zero(dims[d], mode_cols(dims, d)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            dims: dims.to_vec(),
            modes,
        })
    }

    pub fn new(dims: &[usize], modes: Vec<LowRankFactors>) -> Result<Self> {
        if modes.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} mode factors for an order-{} tensor",
                modes.len(),
                dims.len()
            )));
        }
        for (d, x) in modes.iter().enumerate() {
            let cols = mode_cols(dims, d)?;
            if (x.nrows(), x.ncols()) != (dims[d], cols) {
                return Err(Error::DimensionMismatch(format!(
                    "mode {d} factors are {}x{}, unfolding is {}x{cols}",
                    x.nrows(),
                    x.ncols(),
                    dims[d]
                )));
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            modes,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn modes(&self) -> &[LowRankFactors] {
        &self.modes
    }

    pub fn mode_ranks(&self) -> Vec<usize> {
        self.modes.iter().map(|x| x.rank()).collect()
    }

    /// `sum_d lambda_d ||X^d_<d>||_*`.
    pub fn penalty(&self, lambdas: &[f64]) -> f64 {
        self.modes.iter().zip(lambdas).map(|(x, l)| l * x.nuclear_norm()).sum()
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut t = DenseTensor::zeros(&self.dims);
        for (d, x) in self.modes.iter().enumerate() {
            if x.rank() > 0 {
                t = t.add(&tensorize(&x.to_dense(), &self.dims, d));
            }
        }
        t
    }
}

/// Value of the recovered tensor at one index, `O(sum_d k^d)`.
pub fn eval_at(decomp: &LatentDecomposition, idx: &[usize]) -> f64 {
    decomp
        .modes
        .iter()
        .enumerate()
        .filter(|(_, x)| x.rank() > 0)
        .map(|(d, x)| {
            let (r, c) = mode_index_map(&decomp.dims, idx, d);
            x.entry(r, c)
        })
        .sum()
}

/// Adds `scale * X^d` at every pattern position into `out`.
fn accumulate_mode(x: &LowRankFactors, scale: f64, pattern: &ModePattern, out: &mut [f64]) {
    if x.rank() == 0 || scale == 0.0 {
        return;
    }
    let us = x.scaled_u();
    for (e, o) in out.iter_mut().enumerate() {
        let (r, c) = pattern.position(e);
        *o += scale * dot(us.row(r), x.v().row(c));
    }
}

fn predictions(modes: &[LowRankFactors], patterns: &[ModePattern]) -> Vec<f64> {
    let mut out = vec![0.0; patterns.first().map_or(0, |p| p.len())];
    for (x, p) in modes.iter().zip(patterns) {
        accumulate_mode(x, 1.0, p, &mut out);
    }
    out
}

/// Sparse gradient tensor `S` of the data term at `decomp`, supported on the
/// observed entries.
pub fn tensor_gradient(loss: LossKind, decomp: &LatentDecomposition, observed: &SparseTensorCoo) -> SparseTensorCoo {
    let values = observed
        .iter()
        .map(|(idx, o)| loss.derivative(eval_at(decomp, idx), o))
        .collect();
    observed.with_values(values)
}

/// `sum over observed of loss(X_idx, O_idx)`.
pub fn tensor_data_loss(loss: LossKind, decomp: &LatentDecomposition, observed: &SparseTensorCoo) -> f64 {
    observed.iter().map(|(idx, o)| loss.value(eval_at(decomp, idx), o)).sum()
}

/// Default continuation start: `1.5 max_d(lambda_d, sigma_1^d)` where
/// `sigma_1^d` is a power-iteration estimate of the mode-`d` unfolded
/// gradient at zero.
pub fn default_lambda_hat(observed: &SparseTensorCoo, loss: LossKind, lambdas: &[f64], seed: u64) -> Result<f64> {
    let g: Vec<f64> = observed.values().iter().map(|&o| loss.derivative(0.0, o)).collect();
    let mut rng = seeded(seed ^ 0x7e45_0a11);
    let mut best = lambdas.iter().cloned().fold(0.0, f64::max);
    for d in 0..observed.order() {
        let p = ModePattern::new(observed, d)?;
        let op = ModeUnfoldOperator::new(&p, g.clone());
        best = best.max(crate::linalg::spectral_norm_estimate(&op, 10, &mut rng));
    }
    Ok(1.5 * best)
}

/// Validation hook evaluated on every iterate.
pub type TensorMonitor<'a> = &'a mut dyn FnMut(&LatentDecomposition) -> f64;

/// Accelerated inexact proximal gradient for
/// `sum_Omega loss(X_idx, O_idx) + sum_d lambda_d ||X^d_<d>||_*`.
///
/// `cfg.lambda` is ignored in favour of `lambdas`; `cfg.lambda_hat`, if set,
/// must exceed every `lambda_d`.
pub fn tensor_ais_impute(
    observed: &SparseTensorCoo,
    loss: LossKind,
    lambdas: &[f64],
    cfg: &SolverConfig,
) -> Result<(LatentDecomposition, SolverTrace)> {
    tensor_engine(observed, loss, lambdas, cfg, None)
}

pub fn tensor_ais_impute_monitored(
    observed: &SparseTensorCoo,
    loss: LossKind,
    lambdas: &[f64],
    cfg: &SolverConfig,
    monitor: TensorMonitor<'_>,
) -> Result<(LatentDecomposition, SolverTrace)> {
    tensor_engine(observed, loss, lambdas, cfg, Some(monitor))
}

fn tensor_engine(
    observed: &SparseTensorCoo,
    loss: LossKind,
    lambdas: &[f64],
    cfg: &SolverConfig,
    mut monitor: Option<TensorMonitor<'_>>,
) -> Result<(LatentDecomposition, SolverTrace)> {
    let dims = observed.dims().to_vec();
    let order = dims.len();
    if lambdas.len() != order {
        return Err(Error::InvalidArgument(format!(
            "{} regularization weights for an order-{order} tensor",
            lambdas.len()
        )));
    }
    if lambdas.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
        return Err(Error::InvalidArgument("every lambda_d must be positive".into()));
    }
    let lambda_max = lambdas.iter().cloned().fold(0.0, f64::max);
    SolverConfig {
        lambda: lambda_max,
        ..cfg.clone()
    }
    .validate()?;
    if observed.is_empty() {
        return Err(Error::InvalidArgument("no observed entries".into()));
    }
    let patterns: Vec<ModePattern> = (0..order).map(|d| ModePattern::new(observed, d)).collect::<Result<_>>()?;
    if cfg.svd_mode == SvdMode::ExactDense {
        for p in &patterns {
            if p.nrows.saturating_mul(p.ncols) > cfg.densify_cap {
                return Err(Error::DensifyCap {
                    rows: p.nrows,
                    cols: p.ncols,
                    cap: cfg.densify_cap,
                });
            }
        }
    }

    let start = Instant::now();
    let mu = 1.0 / ((order as f64).sqrt() * loss.modulus());
    let lambda_hat = match cfg.lambda_hat {
        Some(h) => h,
        None => default_lambda_hat(observed, loss, lambdas, cfg.seed)?,
    };
    let caps: Vec<usize> = patterns
        .iter()
        .map(|p| cfg.rank_cap.unwrap_or(usize::MAX).min(p.nrows.min(p.ncols)))
        .collect();
    let mut rng = seeded(cfg.seed);
    let targets = observed.values();

    let objective = |modes: &[LowRankFactors], preds: &[f64]| -> f64 {
        let data: f64 = preds.iter().zip(targets).map(|(&x, &o)| loss.value(x, o)).sum();
        data + modes.iter().zip(lambdas).map(|(x, l)| l * x.nuclear_norm()).sum::<f64>()
    };

    let zero = LatentDecomposition::zero(&dims)?;
    let mut x_t = zero.modes.clone();
    let mut x_prev = zero.modes;
    let mut preds_t = vec![0.0; observed.nnz()];
    let mut preds_prev = preds_t.clone();
    let mut f_cur = objective(&x_t, &preds_t);
    let mut c = 1usize;
    let mut trace = SolverTrace::default();

    for t in 1..=cfg.max_iter {
        let theta = (c as f64 - 1.0) / (c as f64 + 2.0);
        let scaled_grad: Vec<f64> = preds_t
            .iter()
            .zip(&preds_prev)
            .zip(targets)
            .map(|((&a, &b), &o)| -mu * loss.derivative((1.0 + theta) * a - theta * b, o))
            .collect();
        let decay = cfg.nu.powi(t as i32 - 1);
        let lambda_t: Vec<f64> = lambdas.iter().map(|&l| (lambda_hat - l) * decay + l).collect();

        let mut x_next = Vec::with_capacity(order);
        for d in 0..order {
            let op = ModeUnfoldOperator::new(&patterns[d], scaled_grad.clone())
                .with_term(1.0 + theta, &x_t[d])
                .with_term(-theta, &x_prev[d]);
            let threshold = mu * lambda_t[d];
            let xd = match cfg.svd_mode {
                SvdMode::ExactDense => svt_dense(&op.to_dense(), threshold),
                SvdMode::Approximate => approximate_prox(
                    &op,
                    x_t[d].v(),
                    x_prev[d].v(),
                    threshold,
                    &Penalty::Nuclear,
                    match cfg.power_iters {
                        crate::solver::PowerIters::Fixed(j) => j,
                        crate::solver::PowerIters::GrowWithIteration => t,
                    },
                    caps[d].max(1),
                    &mut rng,
                )?,
            };
            x_next.push(xd.truncated(caps[d]));
        }

        let preds_next = predictions(&x_next, &patterns);
        let f_next = objective(&x_next, &preds_next);
        let rank: usize = x_next.iter().map(|x| x.rank()).sum();
        if !f_next.is_finite() {
            return Err(Error::Diverged {
                iteration: t,
                objective: f_next,
                lambda_t: lambda_t.iter().cloned().fold(0.0, f64::max),
                rank,
            });
        }
        let restarted = f_next > f_cur;
        c = if restarted { 1 } else { c + 1 };
        let change = (f_next - f_cur).abs() / f_cur.abs().max(f64::MIN_POSITIVE);
        f_cur = f_next;
        x_prev = std::mem::replace(&mut x_t, x_next);
        preds_prev = std::mem::replace(&mut preds_t, preds_next);

        let valid_metric = match monitor.as_mut() {
            Some(f) => Some(f(&LatentDecomposition::new(&dims, x_t.clone())?)),
            None => None,
        };
        trace.records.push(IterationRecord {
            iter: t,
            seconds: start.elapsed().as_secs_f64(),
            objective: f_cur,
            rank,
            lambda_t: lambda_t.iter().cloned().fold(0.0, f64::max),
            restarted,
            valid_metric,
        });
        let continuation_done = lambda_t.iter().zip(lambdas).all(|(lt, l)| lt - l <= cfg.rel_tol * l);
        if continuation_done && change < cfg.rel_tol {
            trace.converged = true;
            break;
        }
    }
    Ok((LatentDecomposition::new(&dims, x_t)?, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, standard_normal};
    use rand::Rng as _;

    fn random_sparse(dims: &[usize], p: f64, seed: u64) -> SparseTensorCoo {
        let mut rng = seeded(seed);
        let dense = DenseTensor::zeros(dims);
        let mut entries = Vec::new();
        for k in 0..dense.as_slice().len() {
            if rng.random::<f64>() < p {
                entries.push((dense.unravel(k), standard_normal(&mut rng)));
            }
        }
        SparseTensorCoo::from_entries(dims, entries).unwrap()
    }

    fn random_factors(m: usize, n: usize, k: usize, seed: u64) -> LowRankFactors {
        let mut rng = seeded(seed);
        let a = gaussian_matrix(m, k, &mut rng).matmul(&gaussian_matrix(k, n, &mut rng));
        crate::linalg::svt_dense(&a, 0.0).truncated(k)
    }

    #[test]
    fn index_map_examples() {
        for d in 0..3 {
            assert_eq!(mode_index_map(&[4, 5, 6], &[0, 0, 0], d), (0, 0));
        }
        // (1,2,2) 1-based in a 2x2x2 tensor, mode 1 -> row 1, col 4.
        let (r, c) = mode_index_map(&[2, 2, 2], &[0, 1, 1], 0);
        assert_eq!((r + 1, c + 1), (1, 4));
    }

    #[test]
    fn unmap_inverts_map() {
        let dims = [4, 3, 2, 2];
        let t = DenseTensor::zeros(&dims);
        for k in 0..t.as_slice().len() {
            let idx = t.unravel(k);
            for d in 0..4 {
                let (r, c) = mode_index_map(&dims, &idx, d);
                assert_eq!(mode_index_unmap(&dims, d, r, c), idx);
            }
        }
    }

    #[test]
    fn matricize_round_trip() {
        let mut rng = seeded(1);
        let t = DenseTensor::from_fn(&[3, 4, 2], |_| standard_normal(&mut rng));
        for d in 0..3 {
            assert_eq!(tensorize(&matricize(&t, d), t.dims(), d), t);
        }
    }

    #[test]
    fn sparse_tensor_validation() {
        assert!(SparseTensorCoo::from_entries(&[2, 2], [(vec![0, 2], 1.0)]).is_err());
        assert!(SparseTensorCoo::from_entries(&[2, 2], [(vec![0, 1], 1.0), (vec![0, 1], 2.0)]).is_err());
        assert!(SparseTensorCoo::from_entries(&[2], [(vec![0], 1.0)]).is_err());
        assert!(mode_cols(&[usize::MAX, 3, 2], 2).is_err());
        let t = SparseTensorCoo::from_entries(&[2, 3, 2], [(vec![1, 2, 0], 4.0), (vec![0, 0, 1], -1.0)]).unwrap();
        assert_eq!(t.index(0), &[0, 0, 1]);
        assert_eq!(t.get(&[1, 2, 0]), Some(4.0));
        assert_eq!(t.get(&[1, 1, 0]), None);
    }

    #[test]
    fn unfold_operator_matches_dense() {
        let dims = [3, 4, 2];
        let s = random_sparse(&dims, 0.5, 2);
        let dense = s.to_dense();
        for d in 0..3 {
            let p = ModePattern::new(&s, d).unwrap();
            let x = random_factors(dims[d], mode_cols(&dims, d).unwrap(), 2, 3 + d as u64);
            let op = ModeUnfoldOperator::new(&p, s.values().to_vec()).with_term(0.7, &x);
            let oracle = matricize(&dense, d).add(&x.to_dense().scaled(0.7));
            assert!(op.to_dense().sub(&oracle).frobenius_norm() < 1e-12);
            let mut rng = seeded(9);
            let b = gaussian_matrix(oracle.ncols(), 3, &mut rng);
            assert!(op.apply_block(&b).sub(&oracle.matmul(&b)).frobenius_norm() < 1e-12);
            let b = gaussian_matrix(oracle.nrows(), 3, &mut rng);
            assert!(op.apply_transpose_block(&b).sub(&oracle.t_matmul(&b)).frobenius_norm() < 1e-12);
            let v = b.column(0);
            let ref_t = oracle.apply_transpose(&v);
            assert!(op.apply_transpose(&v).iter().zip(&ref_t).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn eval_at_matches_dense_sum() {
        let dims = [3, 4, 2];
        let modes = (0..3)
            .map(|d| random_factors(dims[d], mode_cols(&dims, d).unwrap(), 1 + d % 2, 20 + d as u64))
            .collect();
        let dec = LatentDecomposition::new(&dims, modes).unwrap();
        let dense = dec.to_dense();
        for k in 0..dense.as_slice().len() {
            let idx = dense.unravel(k);
            assert!((eval_at(&dec, &idx) - dense.get(&idx)).abs() < 1e-12);
        }
        assert_eq!(eval_at(&LatentDecomposition::zero(&dims).unwrap(), &[1, 1, 1]), 0.0);
    }

    #[test]
    fn order_two_with_huge_second_weight_is_matrix_solver() {
        use crate::solver::{ais_impute, SolverConfig};
        let s = random_sparse(&[12, 10], 0.6, 30);
        let mat = crate::sparse::SparseCoo::from_triplets(12, 10, s.iter().map(|(i, v)| (i[0], i[1], v))).unwrap();
        let lam = 0.5;
        // Large mode-2 weight keeps that mode at zero.
        let cfg = SolverConfig {
            lambda_hat: Some(1e7),
            rel_tol: 1e-15,
            max_iter: 20000,
            svd_mode: SvdMode::ExactDense,
            ..SolverConfig::new(lam)
        };
        let (dec, _) = tensor_ais_impute(&s, LossKind::Square, &[lam, 1e6], &cfg).unwrap();
        assert_eq!(dec.mode_ranks()[1], 0);
        // The tensor step is 1/sqrt(2); compare solutions, not trajectories.
        let (x, _) = ais_impute(&mat, LossKind::Square, &SolverConfig { lambda_hat: Some(1e7), ..cfg.clone() }).unwrap();
        let diff = dec.modes()[0].to_dense().sub(&x.to_dense()).frobenius_norm();
        assert!(diff <= 1e-6 * x.to_dense().frobenius_norm().max(1.0), "diff {diff}");
    }

    #[test]
    fn approximate_matches_exact_with_growing_power_iterations() {
        use crate::solver::{PowerIters, SolverConfig};
        let s = random_sparse(&[4, 4, 3], 0.6, 31);
        let base = SolverConfig {
            rel_tol: 1e-12,
            max_iter: 4000,
            ..SolverConfig::new(0.3)
        };
        let lambdas = [0.3, 0.3, 0.5];
        let (_, ta) = tensor_ais_impute(
            &s,
            LossKind::Square,
            &lambdas,
            &SolverConfig {
                power_iters: PowerIters::GrowWithIteration,
                ..base.clone()
            },
        )
        .unwrap();
        let (_, te) = tensor_ais_impute(
            &s,
            LossKind::Square,
            &lambdas,
            &SolverConfig {
                svd_mode: SvdMode::ExactDense,
                ..base
            },
        )
        .unwrap();
        let (fa, fe) = (ta.final_objective().unwrap(), te.final_objective().unwrap());
        assert!((fa - fe).abs() <= 1e-6 * fe, "{fa} vs {fe}");
    }

    #[test]
    fn gradient_is_shared_loss_derivative() {
        let dims = [3, 4, 2];
        let s = random_sparse(&dims, 0.5, 40);
        let modes = (0..3)
            .map(|d| random_factors(dims[d], mode_cols(&dims, d).unwrap(), 1, 41 + d as u64))
            .collect();
        let dec = LatentDecomposition::new(&dims, modes).unwrap();
        let g = tensor_gradient(LossKind::Square, &dec, &s);
        for ((idx, gv), (_, o)) in g.iter().zip(s.iter()) {
            assert!((gv - (eval_at(&dec, idx) - o)).abs() < 1e-12);
        }
    }
}
