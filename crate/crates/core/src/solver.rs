//! Accelerated inexact Soft-Impute and its baselines.
//!
//! One engine runs every variant. Each iteration:
//!
//! 1. continuation: `lambda_t = (lambda_hat - lambda) nu^(t-1) + lambda`;
//! 2. momentum: `Y = (1 + theta) X_t - theta X_{t-1}`, `theta = (c-1)/(c+2)`;
//! 3. `Z = Y - mu S` with `S` the loss gradient at `Y` on the observed set,
//!    kept as a sparse-plus-low-rank operator;
//! 4. warm start: deflate `V_{t-1}` against `V_t` and seed the power method
//!    with `QR([V_t, V_{t-1}])`;
//! 5. approximate SVT at threshold `mu lambda_t`;
//! 6. restart (`c = 1`) when the objective went up, otherwise `c += 1`.
//!
//! Soft-Impute is the same loop with `theta = 0` and no continuation; the
//! exact baseline replaces step 5 by a dense SVT of the densified `Z`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{
    approx_svt_detailed, approx_weighted_svt, qr_orthonormalize, spectral_norm_estimate, svt_dense,
    weighted_svt_dense, ApproxSvt, DenseMatrix, LinearOperator, LowRankFactors,
};
use crate::loss::{data_loss, gradient_from_predictions, FactoredSum, LossKind};
use crate::rng::{gaussian_matrix, seeded, Rng};
use crate::sparse::SparseCoo;
use crate::splr::{build_accel_iterate, SplrOperator};

/// Columns of the deflated previous basis below this norm are discarded.
pub const DEFLATION_TOL: f64 = 1e-10;

/// Initial block width without a warm start, and the smallest step by which
/// a saturated block grows. Saturated blocks at least double, so reaching
/// rank `r` costs `O(log r)` recomputations instead of `O(r)`.
pub const RANK_GROWTH: usize = 5;

/// Default cap on `rows * cols` for densifying baselines.
pub const DEFAULT_DENSIFY_CAP: usize = 2000 * 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvdMode {
    /// Power-method range finder plus SVD of the compressed matrix.
    Approximate,
    /// Dense SVT of the densified proximal argument.
    ExactDense,
}

/// Number of power iterations per approximate SVT.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PowerIters {
    Fixed(usize),
    /// `J = t` at iteration `t`.
    GrowWithIteration,
}

impl PowerIters {
    fn at(self, t: usize) -> usize {
        match self {
            PowerIters::Fixed(j) => j,
            PowerIters::GrowWithIteration => t,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Continuation start; estimated from the data when `None`.
    pub lambda_hat: Option<f64>,
    pub nu: f64,
    pub power_iters: PowerIters,
    pub max_iter: usize,
    /// Stop when the relative objective change drops below this.
    pub rel_tol: f64,
    pub svd_mode: SvdMode,
    pub seed: u64,
    /// Maximum rank of any iterate; `None` means `min(rows, cols)`.
    pub rank_cap: Option<usize>,
    /// Largest `rows * cols` the exact baseline may densify.
    pub densify_cap: usize,
    /// Outer iterations of the difference-of-convex loops.
    pub outer_max_iter: usize,
}

impl SolverConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            lambda_hat: None,
            nu: 0.7,
            power_iters: PowerIters::Fixed(3),
            max_iter: 1000,
            rel_tol: 1e-4,
            svd_mode: SvdMode::Approximate,
            seed: 0,
            rank_cap: None,
            densify_cap: DEFAULT_DENSIFY_CAP,
            outer_max_iter: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if let Some(h) = self.lambda_hat {
            if !(h.is_finite() && h > self.lambda) {
                return Err(Error::InvalidArgument(format!(
                    "lambda_hat ({h}) must exceed lambda ({})",
                    self.lambda
                )));
            }
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(Error::InvalidArgument(format!("nu must lie in (0, 1), got {}", self.nu)));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::InvalidArgument("rel_tol must be non-negative".into()));
        }
        if self.rank_cap == Some(0) {
            return Err(Error::InvalidArgument("rank_cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// Iterate bookkeeping of the accelerated loop.
#[derive(Clone, Debug)]
pub struct IterateState {
    pub x_t: LowRankFactors,
    pub x_prev: LowRankFactors,
    /// Restart counter; `theta = (c - 1) / (c + 2)`.
    pub c: usize,
    pub t: usize,
    pub lambda_t: f64,
}

impl IterateState {
    pub fn theta(&self) -> f64 {
        (self.c as f64 - 1.0) / (self.c as f64 + 2.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Wall-clock seconds since the solver started, taken after the
    /// iteration's bookkeeping.
    pub seconds: f64,
    pub objective: f64,
    pub rank: usize,
    pub lambda_t: f64,
    pub restarted: bool,
    pub valid_metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl SolverTrace {
    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

/// Spectral penalty handled by the engine's proximal step.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Penalty<'a> {
    Nuclear,
    /// `lambda (||X||_* - tr(A^T X B))` with orthonormal `A`, `B`.
    Truncated { a: &'a DenseMatrix, b: &'a DenseMatrix },
    /// `lambda sum_i w_i sigma_i(X)` with non-decreasing `w`.
    Weighted { w: &'a [f64] },
}

impl Penalty<'_> {
    pub(crate) fn value(&self, x: &LowRankFactors) -> f64 {
        match *self {
            Penalty::Nuclear => x.nuclear_norm(),
            Penalty::Truncated { a, b } => {
                let au = a.t_matmul(x.u());
                let bv = b.t_matmul(x.v());
                let mut tr = 0.0;
                for (l, &s) in x.sigma().iter().enumerate() {
                    let mut d = 0.0;
                    for p in 0..au.nrows() {
                        d += au.get(p, l) * bv.get(p, l);
                    }
                    tr += s * d;
                }
                x.nuclear_norm() - tr
            }
            Penalty::Weighted { w } => x.sigma().iter().zip(w).map(|(s, w)| s * w).sum(),
        }
    }
}

pub(crate) struct EngineOptions<'a> {
    pub accelerate: bool,
    pub continuation: bool,
    pub warm_start: Option<&'a LowRankFactors>,
    pub penalty: Penalty<'a>,
}

impl Default for EngineOptions<'_> {
    fn default() -> Self {
        Self {
            accelerate: true,
            continuation: true,
            warm_start: None,
            penalty: Penalty::Nuclear,
        }
    }
}

/// Optional per-iteration validation hook.
pub type Monitor<'a> = &'a mut dyn FnMut(&LowRankFactors) -> f64;

/// Smallest `lambda` for which zero is a fixed point: the spectral norm of
/// the loss gradient at `X = 0`, estimated with `iterations` power steps.
pub fn estimate_lambda_max(observed: &SparseCoo, loss: LossKind, iterations: usize, seed: u64) -> f64 {
    let zeros = vec![0.0; observed.nnz()];
    let g = gradient_from_predictions(loss, &zeros, observed);
    let mut rng = seeded(seed ^ 0x5eed_1a4b);
    spectral_norm_estimate(&SplrOperator::new(g), iterations, &mut rng)
}

fn relative_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(f64::MIN_POSITIVE)
}

/// Seeds the power method with `QR([V_t, V_{t-1} - V_t (V_t^T V_{t-1})])`,
/// dropping deflated columns with norm below [`DEFLATION_TOL`].
pub fn warm_start_basis(v_t: &DenseMatrix, v_prev: &DenseMatrix) -> DenseMatrix {
    let n = v_t.nrows();
    let mut cols = v_t.columns();
    if v_prev.ncols() > 0 {
        let deflated = if v_t.ncols() > 0 {
            v_prev.sub(&v_t.matmul(&v_t.t_matmul(v_prev)))
        } else {
            v_prev.clone()
        };
        for c in deflated.columns() {
            if crate::linalg::norm2(&c) >= DEFLATION_TOL {
                cols.push(c);
            }
        }
    }
    qr_orthonormalize(&DenseMatrix::from_columns(n, &cols)).q
}

fn grow_block(r: &DenseMatrix, extra: usize, rng: &mut Rng) -> DenseMatrix {
    let g = gaussian_matrix(r.nrows(), extra, rng);
    qr_orthonormalize(&r.hcat(&g)).q
}

/// Thresholded proximal step on the compressed operator, widening the block
/// until some candidate falls below the threshold (or the block is full).
pub(crate) fn approximate_prox<Z: LinearOperator + ?Sized>(
    z: &Z,
    v_t: &DenseMatrix,
    v_prev: &DenseMatrix,
    threshold: f64,
    penalty: &Penalty<'_>,
    power_iters: usize,
    block_limit: usize,
    rng: &mut Rng,
) -> Result<LowRankFactors> {
    let mut r = warm_start_basis(v_t, v_prev);
    if r.ncols() == 0 {
        r = grow_block(&r, RANK_GROWTH.min(block_limit), rng);
    }
    loop {
        let res: ApproxSvt = match *penalty {
            Penalty::Weighted { w } => approx_weighted_svt(z, &r, threshold, w, power_iters)?,
            _ => approx_svt_detailed(z, &r, threshold, power_iters),
        };
        if res.saturated() && r.ncols() < block_limit {
            let extra = RANK_GROWTH.max(r.ncols()).min(block_limit - r.ncols());
            let wider = grow_block(&r, extra, rng);
            if wider.ncols() > r.ncols() {
                r = wider;
                continue;
            }
        }
        return Ok(res.factors);
    }
}

pub(crate) fn run_engine(
    observed: &SparseCoo,
    loss: LossKind,
    cfg: &SolverConfig,
    opts: EngineOptions<'_>,
    mut monitor: Option<Monitor<'_>>,
) -> Result<(LowRankFactors, SolverTrace)> {
    cfg.validate()?;
    if observed.is_empty() {
        return Err(Error::InvalidArgument("no observed entries".into()));
    }
    let (m, n) = (observed.nrows(), observed.ncols());
    if cfg.svd_mode == SvdMode::ExactDense && m.saturating_mul(n) > cfg.densify_cap {
        return Err(Error::DensifyCap {
            rows: m,
            cols: n,
            cap: cfg.densify_cap,
        });
    }
    if let Penalty::Weighted { w } = opts.penalty {
        if w.len() < m.min(n) {
            return Err(Error::InvalidArgument(format!(
                "{} weights for a {m}x{n} problem",
                w.len()
            )));
        }
    }
    let start = Instant::now();
    let mu = 1.0 / loss.modulus();
    let lambda = cfg.lambda;
    let rank_cap = cfg.rank_cap.unwrap_or(usize::MAX).min(m.min(n));
    let mut rng = seeded(cfg.seed);

    let lambda_hat = if opts.continuation {
        match cfg.lambda_hat {
            Some(h) => h,
            None => {
                let s1 = estimate_lambda_max(observed, loss, 20, cfg.seed);
                if s1 > lambda {
                    s1
                } else {
                    2.0 * lambda
                }
            }
        }
    } else {
        lambda
    };

    let objective = |x: &LowRankFactors| -> f64 {
        let preds = FactoredSum::single(x).eval_on(observed);
        data_loss(loss, &preds, observed) + lambda * opts.penalty.value(x)
    };

    let x0 = opts
        .warm_start
        .cloned()
        .unwrap_or_else(|| LowRankFactors::zero(m, n));
    let mut state = IterateState {
        x_t: x0.clone(),
        x_prev: x0,
        c: 1,
        t: 0,
        lambda_t: lambda_hat,
    };
    let mut f_cur = objective(&state.x_t);
    let mut trace = SolverTrace::default();

    let tnn_term = match opts.penalty {
        Penalty::Truncated { a, b } if a.ncols() > 0 => Some(LowRankFactors::from_parts_unchecked(
            a.clone(),
            vec![1.0; a.ncols()],
            b.clone(),
        )),
        _ => None,
    };

    for t in 1..=cfg.max_iter {
        state.t = t;
        state.lambda_t = if opts.continuation {
            (lambda_hat - lambda) * cfg.nu.powi(t as i32 - 1) + lambda
        } else {
            lambda
        };
        let theta = if opts.accelerate { state.theta() } else { 0.0 };

        let mut y = FactoredSum::new();
        y.push(1.0 + theta, &state.x_t);
        y.push(-theta, &state.x_prev);
        let grad = gradient_from_predictions(loss, &y.eval_on(observed), observed);
        let mut z = build_accel_iterate(&grad, &state.x_t, &state.x_prev, theta, mu);
        if let Some(ab) = &tnn_term {
            z = z.with_term(mu * lambda, ab.clone());
        }

        let threshold = mu * state.lambda_t;
        let x_next = match cfg.svd_mode {
            SvdMode::ExactDense => {
                let dense = z.to_dense();
                match opts.penalty {
                    Penalty::Weighted { w } => weighted_svt_dense(&dense, threshold, w)?,
                    _ => svt_dense(&dense, threshold),
                }
            }
            SvdMode::Approximate => approximate_prox(
                &z,
                state.x_t.v(),
                state.x_prev.v(),
                threshold,
                &opts.penalty,
                cfg.power_iters.at(t),
                rank_cap.max(1),
                &mut rng,
            )?,
        }
        .truncated(rank_cap);

        let f_next = objective(&x_next);
        if !f_next.is_finite() {
            return Err(Error::Diverged {
                iteration: t,
                objective: f_next,
                lambda_t: state.lambda_t,
                rank: x_next.rank(),
            });
        }
        let increased = f_next > f_cur;
        let restarted = opts.accelerate && increased;
        if opts.accelerate {
            state.c = if increased { 1 } else { state.c + 1 };
        }
        let change = relative_change(f_next, f_cur);
        f_cur = f_next;
        state.x_prev = std::mem::replace(&mut state.x_t, x_next);

        let valid_metric = monitor.as_mut().map(|f| f(&state.x_t));
        trace.records.push(IterationRecord {
            iter: t,
            seconds: start.elapsed().as_secs_f64(),
            objective: f_cur,
            rank: state.x_t.rank(),
            lambda_t: state.lambda_t,
            restarted,
            valid_metric,
        });

        let continuation_done = state.lambda_t - lambda <= cfg.rel_tol * lambda;
        if continuation_done && change < cfg.rel_tol {
            trace.converged = true;
            break;
        }
    }
    Ok((state.x_t, trace))
}

/// Accelerated inexact Soft-Impute for `min_X sum_Omega loss(X_ij, O_ij) + lambda ||X||_*`.
pub fn ais_impute(
    observed: &SparseCoo,
    loss: LossKind,
    cfg: &SolverConfig,
) -> Result<(LowRankFactors, SolverTrace)> {
    run_engine(observed, loss, cfg, EngineOptions::default(), None)
}

/// [`ais_impute`] with a validation metric evaluated on every iterate.
pub fn ais_impute_monitored(
    observed: &SparseCoo,
    loss: LossKind,
    cfg: &SolverConfig,
    monitor: Monitor<'_>,
) -> Result<(LowRankFactors, SolverTrace)> {
    run_engine(observed, loss, cfg, EngineOptions::default(), Some(monitor))
}

/// Soft-Impute: `X_{t+1} = svt_lambda(P_Omega(O - X_t) + X_t)`, unaccelerated
/// and without continuation. Square loss only.
pub fn soft_impute(
    observed: &SparseCoo,
    loss: LossKind,
    cfg: &SolverConfig,
) -> Result<(LowRankFactors, SolverTrace)> {
    if loss != LossKind::Square {
        return Err(Error::InvalidArgument("soft-impute supports the square loss only".into()));
    }
    let opts = EngineOptions {
        accelerate: false,
        continuation: false,
        ..EngineOptions::default()
    };
    run_engine(observed, loss, cfg, opts, None)
}

/// The accelerated loop with an exact dense SVT in place of the power method.
/// Refuses instances larger than `cfg.densify_cap` entries.
pub fn apg_exact(
    observed: &SparseCoo,
    loss: LossKind,
    cfg: &SolverConfig,
) -> Result<(LowRankFactors, SolverTrace)> {
    let cfg = SolverConfig {
        svd_mode: SvdMode::ExactDense,
        ..cfg.clone()
    };
    run_engine(observed, loss, &cfg, EngineOptions::default(), None)
}

/// Densified proximal argument `X - mu grad f(X)` at a point, for optimality
/// certificates of a returned solution.
pub fn fixed_point_argument(observed: &SparseCoo, loss: LossKind, x: &LowRankFactors) -> DenseMatrix {
    let mu = 1.0 / loss.modulus();
    let preds = FactoredSum::single(x).eval_on(observed);
    let g = gradient_from_predictions(loss, &preds, observed);
    build_accel_iterate(&g, x, x, 0.0, mu).to_dense()
}
