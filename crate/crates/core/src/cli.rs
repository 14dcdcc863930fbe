//! Command-line driver behind the `ais-impute` binary.
//!
//! Exit codes: 0 on success, 1 for usage or input errors, 2 for numeric
//! failures (divergence, refusal to densify).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{synth_matrix, synth_tensor_with_noise, MatrixDataset, SyntheticSplit, TensorDataset};
use crate::error::{Error, Result};
use crate::factor_io::{
    is_decomposition_file, load_decomposition, load_factors, save_decomposition, save_factors, write_trace,
};
use crate::linalg::LowRankFactors;
use crate::loss::LossKind;
use crate::metrics::{evaluate_matrix, evaluate_tensor, Metrics, Task};
use crate::nonconvex::{solve_regularized, RegularizerKind};
use crate::postprocess::{postprocess_matrix, postprocess_tensor};
use crate::solver::{
    ais_impute_monitored, apg_exact, estimate_lambda_max, soft_impute, PowerIters, SolverConfig, SolverTrace,
};
use crate::tensor::{default_lambda_hat, eval_at, tensor_ais_impute_monitored, LatentDecomposition};
use crate::tuning::{geometric_grid, tune_matrix, tune_tensor, validation_error, Tuned};

#[derive(Parser, Debug)]
#[command(name = "ais-impute", version, about = "Low-rank matrix and tensor completion")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic low-rank matrix dataset.
    SynthMatrix(SynthMatrixArgs),
    /// Generate a synthetic low-rank tensor dataset.
    SynthTensor(SynthTensorArgs),
    /// Fit a matrix model on a dataset directory.
    CompleteMatrix(CompleteMatrixArgs),
    /// Fit a latent-nuclear-norm tensor model on a dataset directory.
    CompleteTensor(CompleteTensorArgs),
    /// Score a saved model on the test split.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct SynthMatrixArgs {
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 5)]
    rank: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `separate`: a validation set as large as the training set on top of
    /// it; `half`: observed entries split 50/50.
    #[arg(long, value_enum, default_value_t = SplitArg::Separate)]
    split: SplitArg,
    /// Output directory for train.txt, valid.txt, test.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Separate,
    Half,
}

#[derive(Args, Debug)]
struct SynthTensorArgs {
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    Square,
    Logistic,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Square => LossKind::Square,
            LossArg::Logistic => LossKind::Logistic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Ais,
    SoftImpute,
    ApgExact,
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Dataset directory holding train.txt, valid.txt, test.txt.
    #[arg(long)]
    data: PathBuf,
    /// Regularization weight; tuned on the validation split when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    /// Continuation start.
    #[arg(long)]
    lambda_hat: Option<f64>,
    #[arg(long, default_value_t = 0.7)]
    nu: f64,
    /// Power iterations per approximate SVT.
    #[arg(long, value_name = "J", default_value_t = 3)]
    power_iters: usize,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Relative objective change at which to stop.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = LossArg::Square)]
    loss: LossArg,
    /// Refit the singular values on the observed entries.
    #[arg(long)]
    post: bool,
    /// Per-iteration CSV trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Factor file for the fitted model.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tuning grid, as multiples of the largest useful lambda.
    #[arg(long, default_value_t = 0.1)]
    grid_hi: f64,
    #[arg(long, default_value_t = 0.003)]
    grid_lo: f64,
    #[arg(long, default_value_t = 16)]
    grid_size: usize,
}

#[derive(Args, Debug)]
struct CompleteMatrixArgs {
    #[command(flatten)]
    common: SolverArgs,
    #[arg(long, value_enum, default_value_t = SolverArg::Ais)]
    solver: SolverArg,
    /// nuclear, tnn:R, capped:T or lsp:T.
    #[arg(long, default_value = "nuclear", value_parser = parse_reg)]
    reg: RegularizerKind,
}

#[derive(Args, Debug)]
struct CompleteTensorArgs {
    #[command(flatten)]
    common: SolverArgs,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Per-mode multipliers of lambda; defaults to 1,1,sqrt(m/3) for order 3.
    #[arg(long, value_delimiter = ',')]
    lambda_scale: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Factor file written by a complete-* command.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = TaskArg::Regression)]
    task: TaskArg,
    /// Tensor order, for decomposition files.
    #[arg(long, default_value_t = 3)]
    order: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Regression,
    Sign,
}

fn parse_reg(s: &str) -> std::result::Result<RegularizerKind, String> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (s, None),
    };
    let num = |a: Option<&str>| -> std::result::Result<f64, String> {
        a.ok_or_else(|| format!("`{name}` needs a parameter, e.g. {name}:1"))?
            .parse::<f64>()
            .map_err(|e| format!("bad parameter in `{s}`: {e}"))
    };
    let reg = match name {
        "nuclear" if arg.is_none() => RegularizerKind::Nuclear,
        "tnn" => RegularizerKind::Tnn(
            arg.ok_or("`tnn` needs a rank, e.g. tnn:6")?
                .parse()
                .map_err(|e| format!("bad rank in `{s}`: {e}"))?,
        ),
        "capped" => RegularizerKind::CappedL1(num(arg)?),
        "lsp" => RegularizerKind::Lsp(num(arg)?),
        _ => return Err(format!("unknown regularizer `{s}`")),
    };
    reg.validate().map_err(|e| e.to_string())?;
    Ok(reg)
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthMatrix(a) => {
            let split = match a.split {
                SplitArg::Separate => SyntheticSplit::SeparateValidation,
                SplitArg::Half => SyntheticSplit::HalfObserved,
            };
            let ds = synth_matrix(a.m, a.rank, a.noise, a.seed, split)?;
            ds.save_dir(&a.out)?;
            println!(
                "wrote {}: train {} valid {} test {}",
                a.out.display(),
                ds.train.nnz(),
                ds.valid.nnz(),
                ds.test.nnz()
            );
            Ok(())
        }
        Command::SynthTensor(a) => {
            let ds = synth_tensor_with_noise(a.m, a.noise, a.seed)?;
            ds.save_dir(&a.out)?;
            println!(
                "wrote {}: train {} valid {} test {}",
                a.out.display(),
                ds.train.nnz(),
                ds.valid.nnz(),
                ds.test.nnz()
            );
            Ok(())
        }
        Command::CompleteMatrix(a) => complete_matrix(a),
        Command::CompleteTensor(a) => complete_tensor(a),
        Command::Eval(a) => eval(a),
    }
}

fn base_config(a: &SolverArgs, lambda: f64) -> Result<SolverConfig> {
    let cfg = SolverConfig {
        lambda_hat: a.lambda_hat,
        nu: a.nu,
        power_iters: PowerIters::Fixed(a.power_iters),
        max_iter: a.max_iter,
        rel_tol: a.tol,
        seed: a.seed,
        ..SolverConfig::new(lambda)
    };
    if a.grid_size == 0 || !(a.grid_hi > 0.0 && a.grid_lo > 0.0) {
        return Err(Error::InvalidArgument("tuning grid needs positive bounds and size".into()));
    }
    Ok(cfg)
}

fn task_for(loss: LossKind) -> Task {
    match loss {
        LossKind::Square => Task::Regression,
        LossKind::Logistic => Task::Sign,
    }
}

fn report(label: &str, lambda: f64, m: &Metrics) {
    let mut line = format!("{label}: lambda={lambda:.6e} ranks={:?}", m.ranks);
    if let Some(v) = m.nmse {
        line += &format!(" nmse={v:.6}");
    }
    if let Some(v) = m.rmse {
        line += &format!(" rmse={v:.6}");
    }
    if let Some(v) = m.accuracy {
        line += &format!(" accuracy={v:.6}");
    }
    println!("{line}");
}

fn finish_trace(path: Option<&Path>, trace: &SolverTrace) -> Result<()> {
    if let Some(p) = path {
        write_trace(p, trace)?;
    }
    if !trace.converged {
        eprintln!("warning: stopped at max_iter before reaching the tolerance");
    }
    Ok(())
}

fn complete_matrix(a: CompleteMatrixArgs) -> Result<()> {
    let ds = MatrixDataset::load_dir(&a.common.data)?;
    let loss = LossKind::from(a.common.loss);
    let c = &a.common;
    if a.solver != SolverArg::Ais && !matches!(a.reg, RegularizerKind::Nuclear) {
        return Err(Error::InvalidArgument(
            "nonconvex regularizers are solved by the ais solver only".into(),
        ));
    }
    let (solver, reg) = (a.solver, a.reg);
    let solve = |o: &crate::sparse::SparseCoo, cfg: &SolverConfig| -> Result<(LowRankFactors, SolverTrace)> {
        match (solver, reg) {
            (SolverArg::SoftImpute, _) => soft_impute(o, loss, cfg),
            (SolverArg::ApgExact, _) => apg_exact(o, loss, cfg),
            (SolverArg::Ais, RegularizerKind::Nuclear) => {
                let valid = &ds.valid;
                let truth: Vec<f64> = valid.values().collect();
                let mut monitor = |x: &LowRankFactors| {
                    let pred: Vec<f64> = valid.entries().iter().map(|e| x.entry(e.row, e.col)).collect();
                    validation_error(loss, &pred, &truth)
                };
                ais_impute_monitored(o, loss, cfg, &mut monitor)
            }
            (SolverArg::Ais, r) => solve_regularized(o, loss, r, cfg),
        }
    };
    let tuned = match c.lambda {
        Some(lambda) => {
            let cfg = base_config(c, lambda)?;
            let (model, trace) = solve(&ds.train, &cfg)?;
            let post = if c.post { Some(postprocess_matrix(&model, &ds.train, loss)?) } else { None };
            Tuned {
                lambda,
                model,
                post,
                trace,
                path: Vec::new(),
            }
        }
        None => {
            let top = estimate_lambda_max(&ds.train, loss, 20, c.seed);
            // LSP shrinks by lambda / (theta + sigma), so its grid is scaled by theta.
            let scale = match reg {
                RegularizerKind::Lsp(theta) => theta,
                _ => 1.0,
            };
            let grid = geometric_grid(c.grid_hi * top * scale, c.grid_lo * top * scale, c.grid_size);
            let t = tune_matrix(&ds, loss, &grid, &base_config(c, grid[0])?, c.post, solve)?;
            for p in &t.path {
                eprintln!(
                    "lambda={:.6e} ranks={:?} valid={:.6}{}",
                    p.lambda,
                    p.ranks,
                    p.valid_error,
                    p.valid_error_post.map(|v| format!(" valid_post={v:.6}")).unwrap_or_default()
                );
            }
            t
        }
    };
    let task = task_for(loss);
    if !ds.test.is_empty() {
        report("fit", tuned.lambda, &evaluate_matrix(&tuned.model, &ds.test, task)?);
        if let Some(p) = &tuned.post {
            report("post", tuned.lambda, &evaluate_matrix(p, &ds.test, task)?);
        }
    }
    if let Some(out) = &c.out {
        save_factors(out, tuned.post.as_ref().unwrap_or(&tuned.model))?;
    }
    finish_trace(c.trace.as_deref(), &tuned.trace)
}

/// Unit weights, except that the last mode of an order-3+ tensor gets
/// `sqrt(I_1 / I_D)`; for `m x m x 3` that is `1, 1, sqrt(m) / sqrt(3)`.
fn default_scale(dims: &[usize]) -> Vec<f64> {
    let mut s = vec![1.0; dims.len()];
    if dims.len() >= 3 {
        let last = dims.len() - 1;
        s[last] = (dims[0] as f64 / dims[last] as f64).sqrt();
    }
    s
}

fn complete_tensor(a: CompleteTensorArgs) -> Result<()> {
    let c = &a.common;
    let ds = TensorDataset::load_dir(&c.data, a.order)?;
    let loss = LossKind::from(c.loss);
    let scale = a.lambda_scale.clone().unwrap_or_else(|| default_scale(&ds.dims));
    if scale.len() != ds.dims.len() || scale.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "--lambda-scale needs {} positive values",
            ds.dims.len()
        )));
    }
    let tuned = match c.lambda {
        Some(lambda) => {
            let cfg = base_config(c, lambda)?;
            let lambdas: Vec<f64> = scale.iter().map(|s| s * lambda).collect();
            let truth = ds.valid.values().to_vec();
            let valid = &ds.valid;
            let mut monitor = |x: &LatentDecomposition| {
                let pred: Vec<f64> = valid.iter().map(|(idx, _)| eval_at(x, idx)).collect();
                validation_error(loss, &pred, &truth)
            };
            let (model, trace) = tensor_ais_impute_monitored(&ds.train, loss, &lambdas, &cfg, &mut monitor)?;
            let post = if c.post { Some(postprocess_tensor(&model, &ds.train, loss)?) } else { None };
            Tuned {
                lambda,
                model,
                post,
                trace,
                path: Vec::new(),
            }
        }
        None => {
            let top = default_lambda_hat(&ds.train, loss, &[0.0], c.seed)? / 1.5;
            let grid = geometric_grid(c.grid_hi * top, c.grid_lo * top, c.grid_size);
            let t = tune_tensor(&ds, loss, &grid, &scale, &base_config(c, grid[0])?, c.post)?;
            for p in &t.path {
                eprintln!("lambda={:.6e} ranks={:?} valid={:.6}", p.lambda, p.ranks, p.valid_error);
            }
            t
        }
    };
    let task = task_for(loss);
    if !ds.test.is_empty() {
        report("fit", tuned.lambda, &evaluate_tensor(&tuned.model, &ds.test, task)?);
        if let Some(p) = &tuned.post {
            report("post", tuned.lambda, &evaluate_tensor(p, &ds.test, task)?);
        }
    }
    if let Some(out) = &c.out {
        save_decomposition(out, tuned.post.as_ref().unwrap_or(&tuned.model))?;
    }
    finish_trace(c.trace.as_deref(), &tuned.trace)
}

fn eval(a: EvalArgs) -> Result<()> {
    let task = match a.task {
        TaskArg::Regression => Task::Regression,
        TaskArg::Sign => Task::Sign,
    };
    let m = if is_decomposition_file(&a.model)? {
        let ds = TensorDataset::load_dir(&a.data, a.order)?;
        let x = load_decomposition(&a.model)?;
        if x.dims() != ds.dims.as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "model dims {:?} vs data dims {:?}",
                x.dims(),
                ds.dims
            )));
        }
        evaluate_tensor(&x, &ds.test, task)?
    } else {
        let ds = MatrixDataset::load_dir(&a.data)?;
        let x = load_factors(&a.model)?;
        if [x.nrows(), x.ncols()] != [ds.dims[0], ds.dims[1]] {
            return Err(Error::DimensionMismatch(format!(
                "model is {}x{}, data is {}x{}",
                x.nrows(),
                x.ncols(),
                ds.dims[0],
                ds.dims[1]
            )));
        }
        evaluate_matrix(&x, &ds.test, task)?
    };
    let mut line = format!("ranks={:?}", m.ranks);
    for (k, v) in [("nmse", m.nmse), ("rmse", m.rmse), ("accuracy", m.accuracy)] {
        if let Some(v) = v {
            line += &format!(" {k}={v:.6}");
        }
    }
    println!("{line}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regularizer_specs() {
        assert_eq!(parse_reg("nuclear").unwrap(), RegularizerKind::Nuclear);
        assert_eq!(parse_reg("tnn:6").unwrap(), RegularizerKind::Tnn(6));
        assert_eq!(parse_reg("lsp:0.5").unwrap(), RegularizerKind::Lsp(0.5));
        assert_eq!(parse_reg("capped:2").unwrap(), RegularizerKind::CappedL1(2.0));
        for bad in ["tnn", "lsp:-1", "capped:x", "l1", "nuclear:3", "tnn:0"] {
            assert!(parse_reg(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn default_scale_for_third_order() {
        let s = default_scale(&[120, 120, 3]);
        assert_eq!(&s[..2], &[1.0, 1.0]);
        assert!((s[2] - (40.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["ais-impute", "complete-matrix", "--bogus"]), 1);
        assert_eq!(run(["ais-impute"]), 1);
    }
}
