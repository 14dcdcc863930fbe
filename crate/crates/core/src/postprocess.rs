//! Singular value refitting.
//!
//! Nuclear-norm shrinkage biases the recovered spectrum towards zero. With the
//! subspaces held fixed, the prediction at an observed entry is linear in the
//! spectrum, `x_e = d_e^T theta` with `d_e = u_i o v_j` (elementwise product of
//! factor rows), so refitting is a small smooth problem in `k` variables. The
//! design rows are built once; each evaluation then costs `O(k |Omega|)`.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix, LowRankFactors};
use crate::loss::LossKind;
use crate::sparse::SparseCoo;
use crate::tensor::{mode_index_map, LatentDecomposition, SparseTensorCoo};

pub const LBFGS_MEMORY: usize = 10;
pub const ARMIJO_C: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumFit {
    pub theta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_value: f64,
}

struct Problem {
    design: DenseMatrix,
    targets: Vec<f64>,
    loss: LossKind,
}

impl Problem {
    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut f = 0.0;
        for (e, &o) in self.targets.iter().enumerate() {
            let d = self.design.row(e);
            let x = dot(d, theta);
            f += self.loss.value(x, o);
            let g = self.loss.derivative(x, o);
            for (gk, dk) in grad.iter_mut().zip(d) {
                *gk += g * dk;
            }
        }
        f
    }
}

/// Minimizes a smooth function with L-BFGS and Armijo backtracking.
/// Non-finite trial values shrink the step like any rejected one.
fn lbfgs(mut f: impl FnMut(&[f64], &mut [f64]) -> f64, x0: Vec<f64>) -> Result<SpectrumFit> {
    let k = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; k];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() {
        return Err(Error::InvalidArgument("refit objective is not finite at the start".into()));
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut gn = vec![0.0; k];
    while iterations < MAX_ITER {
        if dot(&g, &g).sqrt() <= GRAD_TOL {
            converged = true;
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-20 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let fnew = f(&xn, &mut gn);
            if fnew.is_finite() && fnew <= fx + ARMIJO_C * step * slope {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((xn, fnew)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if hist.len() == LBFGS_MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let stalled = fnew == fx;
        x = xn;
        fx = fnew;
        std::mem::swap(&mut g, &mut gn);
        if stalled {
            break;
        }
    }
    if !converged && dot(&g, &g).sqrt() <= GRAD_TOL {
        converged = true;
    }
    Ok(SpectrumFit {
        theta: x,
        converged,
        iterations,
        final_value: fx,
    })
}

/// Refits the spectrum of `x` on the observed entries, starting from its
/// (shrunk) singular values. `U` and `V` are not modified.
pub fn refit_matrix(x: &LowRankFactors, observed: &SparseCoo, loss: LossKind) -> Result<SpectrumFit> {
    if x.rank() == 0 {
        return Err(Error::InvalidArgument("cannot refit a rank-zero solution".into()));
    }
    if (x.nrows(), x.ncols()) != (observed.nrows(), observed.ncols()) {
        return Err(Error::DimensionMismatch(format!(
            "factors are {}x{}, data is {}x{}",
            x.nrows(),
            x.ncols(),
            observed.nrows(),
            observed.ncols()
        )));
    }
    let k = x.rank();
    let mut design = DenseMatrix::zeros(observed.nnz(), k);
    for (e, ent) in observed.entries().iter().enumerate() {
        let (u, v) = (x.u().row(ent.row), x.v().row(ent.col));
        for (l, d) in design.row_mut(e).iter_mut().enumerate() {
            *d = u[l] * v[l];
        }
    }
    refit_design(design, observed.values().collect(), loss, x.sigma().to_vec())
}

/// Refit on precomputed design rows (one per observation).
pub(crate) fn refit_design(
    design: DenseMatrix,
    targets: Vec<f64>,
    loss: LossKind,
    theta0: Vec<f64>,
) -> Result<SpectrumFit> {
    let p = Problem {
        design,
        targets,
        loss,
    };
    lbfgs(|t, g| p.eval(t, g), theta0)
}

/// `U diag(theta) V^T` rewritten as valid factors: negative entries flip the
/// matching column of `V`, zeros are dropped, values are re-sorted.
pub fn apply_spectrum(x: &LowRankFactors, theta: &[f64]) -> LowRankFactors {
    assert_eq!(theta.len(), x.rank(), "spectrum length must equal the rank");
    let mut order: Vec<usize> = (0..theta.len()).filter(|&l| theta[l] != 0.0).collect();
    order.sort_by(|&a, &b| theta[b].abs().total_cmp(&theta[a].abs()));
    let u = x.u().select_columns(&order);
    let mut v = x.v().select_columns(&order);
    let sigma: Vec<f64> = order.iter().map(|&l| theta[l].abs()).collect();
    for (c, &l) in order.iter().enumerate() {
        if theta[l] < 0.0 {
            for j in 0..v.nrows() {
                v.set(j, c, -v.get(j, c));
            }
        }
    }
    LowRankFactors::from_parts_unchecked(u, sigma, v)
}

/// Refit and apply in one step. Rank-zero inputs are returned unchanged.
pub fn postprocess_matrix(x: &LowRankFactors, observed: &SparseCoo, loss: LossKind) -> Result<LowRankFactors> {
    if x.rank() == 0 {
        return Ok(x.clone());
    }
    let fit = refit_matrix(x, observed, loss)?;
    Ok(apply_spectrum(x, &fit.theta))
}

/// Joint refit of every mode's spectrum, `theta` concatenated in mode
/// order. Each design row stacks `u^d_{i_d} o v^d_{j_d}` over active modes.
pub fn refit_tensor(
    decomp: &LatentDecomposition,
    observed: &SparseTensorCoo,
    loss: LossKind,
) -> Result<SpectrumFit> {
    if decomp.dims() != observed.dims() {
        return Err(Error::DimensionMismatch(format!(
            "decomposition dims {:?}, data dims {:?}",
            decomp.dims(),
            observed.dims()
        )));
    }
    let k: usize = decomp.mode_ranks().iter().sum();
    if k == 0 {
        return Err(Error::InvalidArgument("cannot refit a rank-zero solution".into()));
    }
    let mut design = DenseMatrix::zeros(observed.nnz(), k);
    for (e, (idx, _)) in observed.iter().enumerate() {
        let row = design.row_mut(e);
        let mut off = 0;
        for (d, x) in decomp.modes().iter().enumerate() {
            if x.rank() == 0 {
                continue;
            }
            let (r, c) = mode_index_map(decomp.dims(), idx, d);
            let (u, v) = (x.u().row(r), x.v().row(c));
            for l in 0..x.rank() {
                row[off + l] = u[l] * v[l];
            }
            off += x.rank();
        }
    }
    let theta0: Vec<f64> = decomp.modes().iter().flat_map(|x| x.sigma().to_vec()).collect();
    refit_design(design, observed.values().to_vec(), loss, theta0)
}

/// Splits a concatenated spectrum back over the modes.
pub fn apply_tensor_spectrum(decomp: &LatentDecomposition, theta: &[f64]) -> LatentDecomposition {
    let mut off = 0;
    let modes = decomp
        .modes()
        .iter()
        .map(|x| {
            let part = &theta[off..off + x.rank()];
            off += x.rank();
            apply_spectrum(x, part)
        })
        .collect();
    assert_eq!(off, theta.len(), "spectrum length must equal the total rank");
    LatentDecomposition::new(decomp.dims(), modes).expect("shapes are unchanged")
}

pub fn postprocess_tensor(
    decomp: &LatentDecomposition,
    observed: &SparseTensorCoo,
    loss: LossKind,
) -> Result<LatentDecomposition> {
    if decomp.mode_ranks().iter().all(|&r| r == 0) {
        return Ok(decomp.clone());
    }
    let fit = refit_tensor(decomp, observed, loss)?;
    Ok(apply_tensor_spectrum(decomp, &fit.theta))
}
