//! Nonconvex spectral regularizers solved by difference-of-convex outer loops
//! with accelerated inner solves.
//!
//! Each outer step linearizes the concave part of the penalty at the current
//! iterate. For the truncated nuclear norm this gives a nuclear-norm problem
//! with a `+ mu lambda A B^T` term in the proximal argument, which fits the
//! sparse-plus-low-rank operator as one more factored term. For capped-l1 and
//! the log-sum penalty it gives a weighted nuclear norm with non-decreasing
//! weights, whose proximal step is a per-singular-value shrinkage.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, LowRankFactors};
use crate::loss::{data_loss, FactoredSum, LossKind};
use crate::solver::{run_engine, EngineOptions, IterationRecord, Penalty, SolverConfig, SolverTrace};
use crate::sparse::SparseCoo;

/// Inner tolerances are never tightened below this.
pub const INNER_TOL_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegularizerKind {
    Nuclear,
    /// `sum_{i >= r} sigma_i`: the top `r - 1` singular values are free.
    Tnn(usize),
    /// `sum_i min(sigma_i, theta)`.
    CappedL1(f64),
    /// `sum_i log(1 + sigma_i / theta)`.
    Lsp(f64),
}

impl RegularizerKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RegularizerKind::Tnn(0) => Err(Error::InvalidArgument("TNN rank must be at least 1".into())),
            RegularizerKind::CappedL1(t) | RegularizerKind::Lsp(t) if !(t > 0.0 && t.is_finite()) => Err(
                Error::InvalidArgument(format!("regularizer parameter must be positive, got {t}")),
            ),
            _ => Ok(()),
        }
    }

    /// Penalty on a spectrum sorted non-increasingly.
    pub fn value(&self, sigma: &[f64]) -> f64 {
        match *self {
            RegularizerKind::Nuclear => sigma.iter().sum(),
            RegularizerKind::Tnn(r) => sigma.iter().skip(r - 1).sum(),
            RegularizerKind::CappedL1(t) => sigma.iter().map(|&s| s.min(t)).sum(),
            RegularizerKind::Lsp(t) => sigma.iter().map(|&s| (s / t).ln_1p()).sum(),
        }
    }

    /// Derivative of the scalar penalty at `s`; for capped-l1 the kink at
    /// `s = theta` takes the lower supergradient 0.
    fn weight(&self, s: f64) -> f64 {
        match *self {
            RegularizerKind::Nuclear | RegularizerKind::Tnn(_) => 1.0,
            RegularizerKind::CappedL1(t) => {
                if s < t {
                    1.0
                } else {
                    0.0
                }
            }
            RegularizerKind::Lsp(t) => 1.0 / (t + s),
        }
    }
}

/// Supergradient weights `w_i = r'(sigma_i)`. Non-decreasing whenever `sigma`
/// is non-increasing. For TNN the first `r - 1` weights are zero.
pub fn supergradient_weights(sigma: &[f64], reg: RegularizerKind) -> Vec<f64> {
    match reg {
        RegularizerKind::Tnn(r) => (0..sigma.len())
            .map(|i| if i + 1 < r { 0.0 } else { 1.0 })
            .collect(),
        _ => sigma.iter().map(|&s| reg.weight(s)).collect(),
    }
}

/// Outer-loop state.
#[derive(Clone, Debug)]
pub struct DcState {
    pub tau: usize,
    pub current: LowRankFactors,
    pub aux: DcAux,
}

#[derive(Clone, Debug)]
pub enum DcAux {
    Truncated { a: DenseMatrix, b: DenseMatrix },
    Weights(Vec<f64>),
}

fn outer_objective(observed: &SparseCoo, loss: LossKind, lambda: f64, reg: RegularizerKind, x: &LowRankFactors) -> f64 {
    let preds = FactoredSum::single(x).eval_on(observed);
    data_loss(loss, &preds, observed) + lambda * reg.value(x.sigma())
}

fn inner_config(cfg: &SolverConfig, tau: usize) -> SolverConfig {
    SolverConfig {
        rel_tol: (cfg.rel_tol * 0.5f64.powi(tau as i32)).max(INNER_TOL_FLOOR.min(cfg.rel_tol)),
        ..cfg.clone()
    }
}

fn aux_for(state: &LowRankFactors, reg: RegularizerKind, kmax: usize) -> DcAux {
    match reg {
        RegularizerKind::Tnn(r) => {
            let k = (r - 1).min(state.rank());
            DcAux::Truncated {
                a: state.u().leading_columns(k),
                b: state.v().leading_columns(k),
            }
        }
        _ => {
            // Zero singular values beyond the current rank.
            let mut sigma = state.sigma().to_vec();
            sigma.resize(kmax, 0.0);
            DcAux::Weights(supergradient_weights(&sigma, reg))
        }
    }
}

fn dc_loop(
    observed: &SparseCoo,
    loss: LossKind,
    reg: RegularizerKind,
    cfg: &SolverConfig,
) -> Result<(LowRankFactors, SolverTrace)> {
    reg.validate()?;
    cfg.validate()?;
    let start = Instant::now();
    let (m, n) = (observed.nrows(), observed.ncols());
    let kmax = m.min(n);
    let lambda = cfg.lambda;

    let mut state = DcState {
        tau: 0,
        current: LowRankFactors::zero(m, n),
        aux: aux_for(&LowRankFactors::zero(m, n), reg, kmax),
    };
    let mut f_cur = outer_objective(observed, loss, lambda, reg, &state.current);
    let mut trace = SolverTrace::default();

    for tau in 0..cfg.outer_max_iter {
        state.tau = tau;
        state.aux = aux_for(&state.current, reg, kmax);
        let penalty = match &state.aux {
            DcAux::Truncated { a, b } => Penalty::Truncated { a, b },
            DcAux::Weights(w) => Penalty::Weighted { w },
        };
        // The cold first solve uses continuation; later ones start at the
        // previous solution where continuation would only move away from it.
        let cold = tau == 0;
        let opts = EngineOptions {
            accelerate: true,
            continuation: cold,
            warm_start: if cold { None } else { Some(&state.current) },
            penalty,
        };
        let inner_cfg = inner_config(cfg, tau);
        let (x_new, _) = run_engine(observed, loss, &inner_cfg, opts, None)
            .map_err(|e| e.context(format!("DC outer iteration {tau}")))?;

        let f_new = outer_objective(observed, loss, lambda, reg, &x_new);
        // Descent safeguard: an inexact inner solve may fail to decrease the
        // majorizer; keep the previous iterate in that case.
        if f_new > f_cur && tau > 0 {
            trace.converged = true;
            break;
        }
        let change = (f_cur - f_new).abs() / f_cur.abs().max(f64::MIN_POSITIVE);
        f_cur = f_new;
        state.current = x_new;
        trace.records.push(IterationRecord {
            iter: tau + 1,
            seconds: start.elapsed().as_secs_f64(),
            objective: f_cur,
            rank: state.current.rank(),
            lambda_t: lambda,
            restarted: false,
            valid_metric: None,
        });
        if tau > 0 && change < cfg.rel_tol {
            trace.converged = true;
            break;
        }
    }
    Ok((state.current, trace))
}

/// Truncated-nuclear-norm completion. `r = 1` is the plain nuclear norm.
///
/// The returned trace has one record per outer iteration, with `objective`
/// the nonconvex objective.
pub fn dc_tnn(
    observed: &SparseCoo,
    loss: LossKind,
    r: usize,
    cfg: &SolverConfig,
) -> Result<(LowRankFactors, SolverTrace)> {
    dc_loop(observed, loss, RegularizerKind::Tnn(r), cfg)
}

/// Capped-l1 or log-sum-penalty completion through reweighted nuclear
/// norms. `Nuclear` is accepted and runs with unit weights.
pub fn dc_weighted(
    observed: &SparseCoo,
    loss: LossKind,
    reg: RegularizerKind,
    cfg: &SolverConfig,
) -> Result<(LowRankFactors, SolverTrace)> {
    if let RegularizerKind::Tnn(_) = reg {
        return Err(Error::InvalidArgument("use dc_tnn for the truncated nuclear norm".into()));
    }
    dc_loop(observed, loss, reg, cfg)
}

/// Dispatches on the regularizer: nuclear runs plain AIS-Impute.
pub fn solve_regularized(
    observed: &SparseCoo,
    loss: LossKind,
    reg: RegularizerKind,
    cfg: &SolverConfig,
) -> Result<(LowRankFactors, SolverTrace)> {
    match reg {
        RegularizerKind::Nuclear => crate::solver::ais_impute(observed, loss, cfg),
        RegularizerKind::Tnn(r) => dc_tnn(observed, loss, r, cfg),
        _ => dc_weighted(observed, loss, reg, cfg),
    }
}
