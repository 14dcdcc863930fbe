//! Smooth elementwise losses and the sparse gradient `S` they induce on the
//! observed pattern.

use crate::linalg::{dot, DenseMatrix, LowRankFactors};
use crate::sparse::SparseCoo;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `1/2 (x - o)^2`
    Square,
    /// `log(1 + exp(-x o))` for labels `o` in `{-1, +1}`
    Logistic,
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LossKind {
    #[inline]
    pub fn value(self, x: f64, o: f64) -> f64 {
        match self {
            LossKind::Square => 0.5 * (x - o) * (x - o),
            LossKind::Logistic => softplus(-x * o),
        }
    }

    /// `d loss / d x`.
    #[inline]
    pub fn derivative(self, x: f64, o: f64) -> f64 {
        match self {
            LossKind::Square => x - o,
            LossKind::Logistic => -o * sigmoid(-x * o),
        }
    }

    /// Lipschitz constant of the derivative (tight).
    pub fn modulus(self) -> f64 {
        match self {
            LossKind::Square => 1.0,
            LossKind::Logistic => 0.25,
        }
    }
}

pub fn loss_value(kind: LossKind, x: f64, o: f64) -> f64 {
    kind.value(x, o)
}

/// A linear combination `sum_k scale_k X_k` of factored matrices that can be
/// evaluated entry-wise in `O(sum_k r_k)` without densifying.
#[derive(Default)]
pub struct FactoredSum<'a> {
    parts: Vec<(f64, DenseMatrix, &'a DenseMatrix)>,
}

impl<'a> FactoredSum<'a> {
    pub fn new() -> Self {
        Self { parts: Vec::new() }
    }

    pub fn single(x: &'a LowRankFactors) -> Self {
        let mut s = Self::new();
        s.push(1.0, x);
        s
    }

    pub fn push(&mut self, scale: f64, x: &'a LowRankFactors) {
        if scale != 0.0 && x.rank() > 0 {
            self.parts.push((scale, x.scaled_u(), x.v()));
        }
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.parts
            .iter()
            .map(|(s, us, v)| s * dot(us.row(i), v.row(j)))
            .sum()
    }

    /// Values at every stored position of `pattern`, in entry order.
    pub fn eval_on(&self, pattern: &SparseCoo) -> Vec<f64> {
        pattern
            .entries()
            .iter()
            .map(|e| self.entry(e.row, e.col))
            .collect()
    }
}

/// `sum over observed of loss(pred, o)`, with `predictions` in entry order.
pub fn data_loss(kind: LossKind, predictions: &[f64], observed: &SparseCoo) -> f64 {
    predictions
        .iter()
        .zip(observed.values())
        .map(|(&x, o)| kind.value(x, o))
        .sum()
}

/// Gradient of the data term from predictions on the observed pattern.
pub fn gradient_from_predictions(kind: LossKind, predictions: &[f64], observed: &SparseCoo) -> SparseCoo {
    observed.with_values(
        predictions
            .iter()
            .zip(observed.values())
            .map(|(&x, o)| kind.derivative(x, o))
            .collect(),
    )
}

/// `[S]_ij = d loss(Y_ij, O_ij) / d Y_ij` on the observed pattern.
pub fn sparse_gradient(kind: LossKind, y: &FactoredSum<'_>, observed: &SparseCoo) -> SparseCoo {
    gradient_from_predictions(kind, &y.eval_on(observed), observed)
}

/// `sum_Omega loss(X_ij, O_ij) + lambda * reg(sigma(X))`.
pub fn objective(
    kind: LossKind,
    x: &LowRankFactors,
    observed: &SparseCoo,
    lambda: f64,
    reg: impl Fn(&[f64]) -> f64,
) -> f64 {
    let preds = FactoredSum::single(x).eval_on(observed);
    data_loss(kind, &preds, observed) + lambda * reg(x.sigma())
}

/// Nuclear norm as a spectral regularizer.
pub fn nuclear(sigma: &[f64]) -> f64 {
    sigma.iter().sum()
}
