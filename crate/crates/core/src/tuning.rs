//! Validation-based choice of `lambda` over a geometric grid.

use crate::data::{MatrixDataset, TensorDataset};
use crate::error::{Error, Result};
use crate::linalg::LowRankFactors;
use crate::loss::LossKind;
use crate::metrics::{rmse, sign_accuracy};
use crate::postprocess::{postprocess_matrix, postprocess_tensor};
use crate::solver::{SolverConfig, SolverTrace};
use crate::sparse::SparseCoo;
use crate::tensor::{eval_at, tensor_ais_impute, LatentDecomposition};

/// `count` values from `hi` down to `lo`, equally spaced in log scale.
pub fn geometric_grid(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    assert!(hi > 0.0 && lo > 0.0 && count >= 1, "grid bounds must be positive");
    if count == 1 {
        return vec![hi];
    }
    let r = (lo / hi).ln() / (count - 1) as f64;
    (0..count).map(|i| hi * (r * i as f64).exp()).collect()
}

/// RMSE for the square loss, sign error rate for the logistic loss.
pub fn validation_error(loss: LossKind, pred: &[f64], truth: &[f64]) -> f64 {
    match loss {
        LossKind::Square => rmse(pred, truth),
        LossKind::Logistic => 1.0 - sign_accuracy(pred, truth),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuningPoint {
    pub lambda: f64,
    pub ranks: Vec<usize>,
    pub valid_error: f64,
    pub valid_error_post: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Tuned<M> {
    pub lambda: f64,
    pub model: M,
    /// Refitted model, when refitting was requested.
    pub post: Option<M>,
    pub trace: SolverTrace,
    pub path: Vec<TuningPoint>,
}

fn matrix_valid_error(x: &LowRankFactors, valid: &SparseCoo, loss: LossKind) -> f64 {
    let pred: Vec<f64> = valid.entries().iter().map(|e| x.entry(e.row, e.col)).collect();
    let truth: Vec<f64> = valid.values().collect();
    validation_error(loss, &pred, &truth)
}

/// Solves on `ds.train` for every grid value and keeps the one with the
/// smallest validation error; with `refit`, errors are measured after
/// spectrum refitting and the refitted model is returned too.
pub fn tune_matrix(
    ds: &MatrixDataset,
    loss: LossKind,
    grid: &[f64],
    cfg: &SolverConfig,
    refit: bool,
    solve: impl Fn(&SparseCoo, &SolverConfig) -> Result<(LowRankFactors, SolverTrace)>,
) -> Result<Tuned<LowRankFactors>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    let mut best: Option<(f64, Tuned<LowRankFactors>)> = None;
    let mut path = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let c = SolverConfig {
            lambda,
            lambda_hat: cfg.lambda_hat.filter(|&h| h > lambda),
            ..cfg.clone()
        };
        let (x, trace) = solve(&ds.train, &c).map_err(|e| e.context(format!("lambda = {lambda}")))?;
        let err = matrix_valid_error(&x, &ds.valid, loss);
        let post = if refit { Some(postprocess_matrix(&x, &ds.train, loss)?) } else { None };
        let err_post = post.as_ref().map(|p| matrix_valid_error(p, &ds.valid, loss));
        path.push(TuningPoint {
            lambda,
            ranks: vec![x.rank()],
            valid_error: err,
            valid_error_post: err_post,
        });
        let score = err_post.unwrap_or(err);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((
                score,
                Tuned {
                    lambda,
                    model: x,
                    post,
                    trace,
                    path: Vec::new(),
                },
            ));
        }
    }
    let (_, mut tuned) = best.expect("grid is non-empty");
    tuned.path = path;
    Ok(tuned)
}

fn tensor_valid_error(x: &LatentDecomposition, ds: &TensorDataset, loss: LossKind) -> f64 {
    let pred: Vec<f64> = ds.valid.iter().map(|(idx, _)| eval_at(x, idx)).collect();
    validation_error(loss, &pred, ds.valid.values())
}

/// Tensor analogue of [`tune_matrix`]; mode weights are `scale_d * lambda`.
pub fn tune_tensor(
    ds: &TensorDataset,
    loss: LossKind,
    grid: &[f64],
    scale: &[f64],
    cfg: &SolverConfig,
    refit: bool,
) -> Result<Tuned<LatentDecomposition>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    let mut best: Option<(f64, Tuned<LatentDecomposition>)> = None;
    let mut path = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let lambdas: Vec<f64> = scale.iter().map(|s| s * lambda).collect();
        let max_l = lambdas.iter().cloned().fold(0.0, f64::max);
        let c = SolverConfig {
            lambda,
            lambda_hat: cfg.lambda_hat.filter(|&h| h > max_l),
            ..cfg.clone()
        };
        let (x, trace) = tensor_ais_impute(&ds.train, loss, &lambdas, &c)
            .map_err(|e| e.context(format!("lambda = {lambda}")))?;
        let err = tensor_valid_error(&x, ds, loss);
        let post = if refit { Some(postprocess_tensor(&x, &ds.train, loss)?) } else { None };
        let err_post = post.as_ref().map(|p| tensor_valid_error(p, ds, loss));
        path.push(TuningPoint {
            lambda,
            ranks: x.mode_ranks(),
            valid_error: err,
            valid_error_post: err_post,
        });
        let score = err_post.unwrap_or(err);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((
                score,
                Tuned {
                    lambda,
                    model: x,
                    post,
                    trace,
                    path: Vec::new(),
                },
            ));
        }
    }
    let (_, mut tuned) = best.expect("grid is non-empty");
    tuned.path = path;
    Ok(tuned)
}
