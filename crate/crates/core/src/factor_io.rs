//! Persistence of factors and solver traces.
//!
//! Factor files are plain text. A matrix block is a header line
//! `rows cols rank`, then `rows` lines of `U`, one line of singular values,
//! and `cols` lines of `V`; rank zero has the header only. A tensor file
//! starts with `modes D` and `dims I1 ... ID`, followed by one matrix block
//! per mode. Numbers carry 17 significant digits so values round-trip
//! exactly.
//!
//! Trace CSV columns: `iter,seconds,objective,rank,lambda_t,restart,valid_metric`
//! (`restart` is 0/1, `valid_metric` is empty when not tracked).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, LowRankFactors};
use crate::solver::{IterationRecord, SolverTrace};
use crate::tensor::LatentDecomposition;

pub const TRACE_COLUMNS: [&str; 7] = ["iter", "seconds", "objective", "rank", "lambda_t", "restart", "valid_metric"];

fn write_row(w: &mut impl Write, vals: impl Iterator<Item = f64>) -> Result<()> {
    let parts: Vec<String> = vals.map(|v| format!("{v:.16e}")).collect();
    writeln!(w, "{}", parts.join(" "))?;
    Ok(())
}

fn write_block(w: &mut impl Write, x: &LowRankFactors) -> Result<()> {
    writeln!(w, "{} {} {}", x.nrows(), x.ncols(), x.rank())?;
    if x.rank() == 0 {
        return Ok(());
    }
    for i in 0..x.nrows() {
        write_row(w, x.u().row(i).iter().copied())?;
    }
    write_row(w, x.sigma().iter().copied())?;
    for j in 0..x.ncols() {
        write_row(w, x.v().row(j).iter().copied())?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    Ok(BufWriter::new(f))
}

pub fn save_factors(path: &Path, x: &LowRankFactors) -> Result<()> {
    let mut w = create(path)?;
    write_block(&mut w, x)?;
    w.flush()?;
    Ok(())
}

pub fn save_decomposition(path: &Path, x: &LatentDecomposition) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "modes {}", x.dims().len())?;
    let dims: Vec<String> = x.dims().iter().map(|d| d.to_string()).collect();
    writeln!(w, "dims {}", dims.join(" "))?;
    for m in x.modes() {
        write_block(&mut w, m)?;
    }
    w.flush()?;
    Ok(())
}

struct Lines<'a> {
    path: &'a Path,
    it: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.it
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| self.err(0, "unexpected end of file"))
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    fn numbers<T: std::str::FromStr>(&mut self, expect: usize) -> Result<Vec<T>> {
        let (ln, l) = self.next_line()?;
        let v: Vec<T> = l
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| self.err(ln, format!("bad number {s:?}"))))
            .collect::<Result<_>>()?;
        if v.len() != expect {
            return Err(self.err(ln, format!("expected {expect} numbers, found {}", v.len())));
        }
        Ok(v)
    }

    fn tagged(&mut self, tag: &str) -> Result<Vec<usize>> {
        let (ln, l) = self.next_line()?;
        let rest = l
            .trim()
            .strip_prefix(tag)
            .ok_or_else(|| self.err(ln, format!("expected `{tag}` line")))?;
        rest.split_whitespace()
            .map(|s| s.parse().map_err(|_| self.err(ln, format!("bad number {s:?}"))))
            .collect()
    }

    fn block(&mut self) -> Result<LowRankFactors> {
        let h: Vec<usize> = self.numbers(3)?;
        let (rows, cols, k) = (h[0], h[1], h[2]);
        if k == 0 {
            return Ok(LowRankFactors::zero(rows, cols));
        }
        let mut u = Vec::with_capacity(rows * k);
        for _ in 0..rows {
            u.extend(self.numbers::<f64>(k)?);
        }
        let sigma = self.numbers::<f64>(k)?;
        let mut v = Vec::with_capacity(cols * k);
        for _ in 0..cols {
            v.extend(self.numbers::<f64>(k)?);
        }
        LowRankFactors::new(
            DenseMatrix::from_row_major(rows, k, u),
            sigma,
            DenseMatrix::from_row_major(cols, k, v),
        )
        .map_err(|e| e.context(self.path.display().to_string()))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))
}

pub fn load_factors(path: &Path) -> Result<LowRankFactors> {
    let text = read(path)?;
    let mut lines = Lines {
        path,
        it: text.lines().enumerate(),
    };
    lines.block()
}

pub fn load_decomposition(path: &Path) -> Result<LatentDecomposition> {
    let text = read(path)?;
    let mut lines = Lines {
        path,
        it: text.lines().enumerate(),
    };
    let d = lines.tagged("modes")?;
    let dims = lines.tagged("dims")?;
    if d.len() != 1 || dims.len() != d[0] {
        return Err(lines.err(2, "mode count does not match dims"));
    }
    let modes = (0..d[0]).map(|_| lines.block()).collect::<Result<_>>()?;
    LatentDecomposition::new(&dims, modes)
}

/// True when the file starts with a `modes` line.
pub fn is_decomposition_file(path: &Path) -> Result<bool> {
    Ok(read(path)?.trim_start().starts_with("modes"))
}

pub fn write_trace(path: &Path, trace: &SolverTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(TRACE_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in &trace.records {
        w.write_record([
            r.iter.to_string(),
            r.seconds.to_string(),
            format!("{:.16e}", r.objective),
            r.rank.to_string(),
            format!("{:.16e}", r.lambda_t),
            u8::from(r.restarted).to_string(),
            r.valid_metric.map(|v| format!("{v:.16e}")).unwrap_or_default(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: e.to_string(),
    }
}

pub fn read_trace(path: &Path) -> Result<Vec<IterationRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().ne(TRACE_COLUMNS) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: format!("unexpected trace header {headers:?}"),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| Error::Parse {
            path: path.display().to_string(),
            line,
            msg: format!("bad {what}"),
        };
        let f = |k: usize, what: &str| rec[k].parse::<f64>().map_err(|_| bad(what));
        out.push(IterationRecord {
            iter: rec[0].parse().map_err(|_| bad("iter"))?,
            seconds: f(1, "seconds")?,
            objective: f(2, "objective")?,
            rank: rec[3].parse().map_err(|_| bad("rank"))?,
            lambda_t: f(4, "lambda_t")?,
            restarted: match &rec[5] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("restart flag")),
            },
            valid_metric: if rec[6].is_empty() { None } else { Some(f(6, "valid_metric")?) },
        });
    }
    Ok(out)
}
