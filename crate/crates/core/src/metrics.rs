//! Evaluation metrics.
//!
//! - NMSE: `||P(X - T)||_F / ||P(T)||_F` over the test entries (for synthetic
//!   data these are the unobserved cells, valued with the clean truth).
//! - RMSE: root mean squared error over the test entries.
//! - Sign accuracy: fraction of test entries with `sign(X) = O`, where
//!   `sign(0)` counts as `+1`.

use crate::error::{Error, Result};
use crate::linalg::LowRankFactors;
use crate::sparse::SparseCoo;
use crate::tensor::{eval_at, LatentDecomposition, SparseTensorCoo};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regression,
    Sign,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub nmse: Option<f64>,
    pub rmse: Option<f64>,
    pub accuracy: Option<f64>,
    /// One entry for a matrix, one per mode for a tensor.
    pub ranks: Vec<usize>,
}

pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn nmse(pred: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    (num / den).sqrt()
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    (num / truth.len() as f64).sqrt()
}

pub fn sign_accuracy(pred: &[f64], truth: &[f64]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| sign(**p) == **t).count();
    hits as f64 / truth.len() as f64
}

/// Metrics from aligned prediction/target lists.
pub fn metrics_from(pred: &[f64], truth: &[f64], task: Task, ranks: Vec<usize>) -> Result<Metrics> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    Ok(match task {
        Task::Regression => Metrics {
            nmse: Some(nmse(pred, truth)),
            rmse: Some(rmse(pred, truth)),
            accuracy: None,
            ranks,
        },
        Task::Sign => Metrics {
            nmse: None,
            rmse: None,
            accuracy: Some(sign_accuracy(pred, truth)),
            ranks,
        },
    })
}

pub fn evaluate_matrix(x: &LowRankFactors, test: &SparseCoo, task: Task) -> Result<Metrics> {
    let pred: Vec<f64> = test.entries().iter().map(|e| x.entry(e.row, e.col)).collect();
    let truth: Vec<f64> = test.values().collect();
    metrics_from(&pred, &truth, task, vec![x.rank()])
}

pub fn evaluate_tensor(x: &LatentDecomposition, test: &SparseTensorCoo, task: Task) -> Result<Metrics> {
    let pred: Vec<f64> = test.iter().map(|(idx, _)| eval_at(x, idx)).collect();
    metrics_from(&pred, test.values(), task, x.mode_ranks())
}
