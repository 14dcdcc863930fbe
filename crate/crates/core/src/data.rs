//! Datasets: synthetic generators, splits, and the text COO format.
//!
//! COO files hold one entry per line: 1-based indices followed by the value,
//! whitespace separated (`::` is accepted as a separator too, for MovieLens
//! dumps). An optional header `# dims: I1 I2 ...` fixes the shape; other
//! `#` lines and blank lines are skipped. Tokens after the value (MovieLens
//! timestamps) are ignored.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{gaussian_matrix, seeded, standard_normal};
use crate::sparse::SparseCoo;
use crate::tensor::{DenseTensor, SparseTensorCoo};

/// Train/validation/test triple with disjoint index sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub train: T,
    pub valid: T,
    pub test: T,
    pub dims: Vec<usize>,
    pub provenance: String,
}

pub type MatrixDataset = Dataset<SparseCoo>;
pub type TensorDataset = Dataset<SparseTensorCoo>;

/// How synthetic observations are divided.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticSplit {
    /// `n` observed entries for training plus a disjoint set of `n` for
    /// validation.
    SeparateValidation,
    /// `n` observed entries split 50/50 into training and validation.
    HalfObserved,
}

/// `floor(c * m * ln m)`.
pub fn observed_count(c: f64, m: usize) -> usize {
    (c * m as f64 * (m as f64).ln()).floor() as usize
}

/// Largest fraction of cells the generators observe. `c m ln m` outgrows
/// `m^2` for small `m`; the protocol sizes used in experiments are below it.
pub const MAX_OBSERVED_FRACTION: f64 = 0.8;

/// Per-set observation count: `floor(c m ln m)` clamped so that `sets` such
/// sets cover at most [`MAX_OBSERVED_FRACTION`] of `total` cells.
pub fn clamped_count(c: f64, m: usize, total: usize, sets: usize) -> usize {
    let cap = (MAX_OBSERVED_FRACTION * total as f64 / sets as f64).floor() as usize;
    observed_count(c, m).min(cap)
}

fn cells_to_matrix(m: usize, n: usize, cells: &[usize], values: impl Fn(usize, usize) -> f64) -> Result<SparseCoo> {
    SparseCoo::from_triplets(m, n, cells.iter().map(|&k| (k / n, k % n, values(k / n, k % n))))
}

/// Low-rank matrix `U V` with standard normal `m x rank` and `rank x m`
/// factors plus i.i.d. `N(0, noise_sd^2)` noise. `floor(15 m ln m)` entries
/// are observed; the test set is every unobserved entry, valued with the
/// clean matrix.
///
/// Draw order (part of the seeding contract): `U` row-major, `V` row-major,
/// noise row-major over all cells, then the observed cells.
pub fn synth_matrix(m: usize, rank: usize, noise_sd: f64, seed: u64, split: SyntheticSplit) -> Result<MatrixDataset> {
    if m < 10 {
        return Err(Error::InvalidArgument(format!("synthetic matrices need m >= 10, got {m}")));
    }
    if rank == 0 || rank > m {
        return Err(Error::InvalidArgument(format!("rank must lie in 1..={m}, got {rank}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidArgument("noise_sd must be non-negative".into()));
    }
    let mut rng = seeded(seed);
    let u = gaussian_matrix(m, rank, &mut rng);
    let v = gaussian_matrix(rank, m, &mut rng);
    let clean = u.matmul(&v);
    let noise = gaussian_matrix(m, m, &mut rng);
    let total = m * m;
    let (train_n, valid_n) = match split {
        SyntheticSplit::SeparateValidation => {
            let n = clamped_count(15.0, m, total, 2);
            (n, n)
        }
        SyntheticSplit::HalfObserved => {
            let n = clamped_count(15.0, m, total, 1);
            (n / 2, n - n / 2)
        }
    };
    let cells = sample(&mut rng, total, train_n + valid_n).into_vec();
    let noisy = |i: usize, j: usize| clean.get(i, j) + noise_sd * noise.get(i, j);
    let train = cells_to_matrix(m, m, &cells[..train_n], noisy)?;
    let valid = cells_to_matrix(m, m, &cells[train_n..], noisy)?;
    let mut seen = vec![false; total];
    cells.iter().for_each(|&k| seen[k] = true);
    let unobserved: Vec<usize> = (0..total).filter(|&k| !seen[k]).collect();
    let test = cells_to_matrix(m, m, &unobserved, |i, j| clean.get(i, j))?;
    Ok(Dataset {
        train,
        valid,
        test,
        dims: vec![m, m],
        provenance: format!("synthetic matrix m={m} rank={rank} noise_sd={noise_sd} seed={seed} split={split:?}"),
    })
}

/// Noise-free ground truth of [`synth_matrix`] for the same arguments.
pub fn synth_matrix_truth(m: usize, rank: usize, seed: u64) -> DenseMatrix {
    let mut rng = seeded(seed);
    let u = gaussian_matrix(m, rank, &mut rng);
    let v = gaussian_matrix(rank, m, &mut rng);
    u.matmul(&v)
}

/// Clean `m x m x 3` tensor `C x_1 A_1 x_2 A_2 x_3 A_3` with a `3 x 3 x 3`
/// core and `A_1, A_2` of size `m x 3`, `A_3` of size `3 x 3`.
/// Draw order: `A_1`, `A_2`, `A_3` row-major, then `C` first index fastest.
pub fn synth_tensor_truth(m: usize, seed: u64) -> DenseTensor {
    let mut rng = seeded(seed);
    tensor_truth_from(m, &mut rng)
}

fn tensor_truth_from(m: usize, rng: &mut crate::rng::Rng) -> DenseTensor {
    let a1 = gaussian_matrix(m, 3, rng);
    let a2 = gaussian_matrix(m, 3, rng);
    let a3 = gaussian_matrix(3, 3, rng);
    let core = DenseTensor::from_fn(&[3, 3, 3], |_| standard_normal(rng));
    DenseTensor::from_fn(&[m, m, 3], |idx| {
        let (i, j, k) = (idx[0], idx[1], idx[2]);
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                let ab = a1.get(i, a) * a2.get(j, b);
                for c in 0..3 {
                    s += core.get(&[a, b, c]) * ab * a3.get(k, c);
                }
            }
        }
        s
    })
}

/// Synthetic tensor with `N(0, 0.05^2)` noise; `floor(45 m ln m)` observed
/// entries split 50/50 into training and validation, test = unobserved.
pub fn synth_tensor(m: usize, seed: u64) -> Result<TensorDataset> {
    synth_tensor_with_noise(m, 0.05, seed)
}

pub fn synth_tensor_with_noise(m: usize, noise_sd: f64, seed: u64) -> Result<TensorDataset> {
    if m < 10 {
        return Err(Error::InvalidArgument(format!("synthetic tensors need m >= 10, got {m}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidArgument("noise_sd must be non-negative".into()));
    }
    let mut rng = seeded(seed);
    let clean = tensor_truth_from(m, &mut rng);
    let total = clean.as_slice().len();
    let noise: Vec<f64> = (0..total).map(|_| standard_normal(&mut rng)).collect();
    let n = clamped_count(45.0, m, total, 1);
    let cells = sample(&mut rng, total, n).into_vec();
    let dims = clean.dims().to_vec();
    let build = |ks: &[usize], noisy: bool| {
        SparseTensorCoo::from_entries(
            &dims,
            ks.iter().map(|&k| {
                let v = clean.as_slice()[k] + if noisy { noise_sd * noise[k] } else { 0.0 };
                (clean.unravel(k), v)
            }),
        )
    };
    let half = n / 2;
    let train = build(&cells[..half], true)?;
    let valid = build(&cells[half..], true)?;
    let mut seen = vec![false; total];
    cells.iter().for_each(|&k| seen[k] = true);
    let unobserved: Vec<usize> = (0..total).filter(|&k| !seen[k]).collect();
    let test = build(&unobserved, false)?;
    Ok(Dataset {
        train,
        valid,
        test,
        dims,
        provenance: format!("synthetic tensor m={m} noise_sd={noise_sd} seed={seed}"),
    })
}

/// Random split of one observed matrix into train/valid/test by fractions.
pub fn split_random(all: &SparseCoo, train_frac: f64, valid_frac: f64, seed: u64) -> Result<MatrixDataset> {
    if !(train_frac > 0.0 && valid_frac >= 0.0 && train_frac + valid_frac < 1.0) {
        return Err(Error::InvalidArgument("split fractions must be positive and sum below 1".into()));
    }
    let mut order: Vec<usize> = (0..all.nnz()).collect();
    order.shuffle(&mut seeded(seed));
    let n_train = (train_frac * all.nnz() as f64).round() as usize;
    let n_valid = (valid_frac * all.nnz() as f64).round() as usize;
    let pick = |ids: &[usize]| {
        SparseCoo::from_triplets(
            all.nrows(),
            all.ncols(),
            ids.iter().map(|&k| {
                let e = all.entries()[k];
                (e.row, e.col, e.value)
            }),
        )
    };
    Ok(Dataset {
        train: pick(&order[..n_train])?,
        valid: pick(&order[n_train..n_train + n_valid])?,
        test: pick(&order[n_train + n_valid..])?,
        dims: vec![all.nrows(), all.ncols()],
        provenance: format!("random split {train_frac}/{valid_frac} seed={seed}"),
    })
}

/// Parsed COO text before shape validation. Indices are 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCoo {
    pub header_dims: Option<Vec<usize>>,
    pub entries: Vec<(Vec<usize>, f64)>,
    /// Source line (1-based) of each entry.
    pub lines: Vec<usize>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads an order-`order` COO file.
pub fn read_coo(path: &Path, order: usize) -> Result<RawCoo> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    let mut raw = RawCoo {
        header_dims: None,
        entries: Vec::new(),
        lines: Vec::new(),
    };
    let mut first_line: HashMap<Vec<usize>, usize> = HashMap::new();
    for (ln0, line) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            if let Some(dims) = rest.trim().strip_prefix("dims:") {
                let dims: Vec<usize> = dims
                    .split_whitespace()
                    .map(|s| s.parse().map_err(|_| parse_err(path, ln, format!("bad dimension {s:?}"))))
                    .collect::<Result<_>>()?;
                if dims.len() != order || dims.contains(&0) {
                    return Err(parse_err(path, ln, format!("expected {order} positive dimensions")));
                }
                raw.header_dims = Some(dims);
            }
            continue;
        }
        let normalized = t.replace("::", " ").replace(',', " ");
        let toks: Vec<&str> = normalized.split_whitespace().collect();
        if toks.len() < order + 1 {
            return Err(parse_err(path, ln, format!("expected {order} indices and a value")));
        }
        let mut idx = Vec::with_capacity(order);
        for s in &toks[..order] {
            let i: usize = s.parse().map_err(|_| parse_err(path, ln, format!("bad index {s:?}")))?;
            if i == 0 {
                return Err(parse_err(path, ln, "indices are 1-based"));
            }
            idx.push(i - 1);
        }
        let v: f64 = toks[order]
            .parse()
            .map_err(|_| parse_err(path, ln, format!("bad value {:?}", toks[order])))?;
        if !v.is_finite() {
            return Err(parse_err(path, ln, "value is not finite"));
        }
        if let Some(prev) = first_line.insert(idx.clone(), ln) {
            return Err(parse_err(
                path,
                ln,
                format!("duplicate entry {:?} (first on line {prev})", idx.iter().map(|i| i + 1).collect::<Vec<_>>()),
            ));
        }
        raw.entries.push((idx, v));
        raw.lines.push(ln);
    }
    Ok(raw)
}

fn resolve_dims(path: &Path, raw: &RawCoo, order: usize, dims: Option<&[usize]>) -> Result<Vec<usize>> {
    let dims = match (dims, &raw.header_dims) {
        (Some(d), _) => d.to_vec(),
        (None, Some(h)) => h.clone(),
        (None, None) => (0..order)
            .map(|l| raw.entries.iter().map(|(i, _)| i[l] + 1).max().unwrap_or(1))
            .collect(),
    };
    for ((idx, _), &ln) in raw.entries.iter().zip(&raw.lines) {
        if let Some(l) = (0..order).find(|&l| idx[l] >= dims[l]) {
            return Err(parse_err(
                path,
                ln,
                format!("index {} out of range for mode {} of size {}", idx[l] + 1, l + 1, dims[l]),
            ));
        }
    }
    Ok(dims)
}

/// Loads a matrix. Shape precedence: `dims`, then the file header, then
/// the largest index seen.
pub fn load_matrix(path: &Path, dims: Option<[usize; 2]>) -> Result<SparseCoo> {
    let raw = read_coo(path, 2)?;
    let dims = resolve_dims(path, &raw, 2, dims.as_ref().map(|d| &d[..]))?;
    SparseCoo::from_triplets(dims[0], dims[1], raw.entries.into_iter().map(|(i, v)| (i[0], i[1], v)))
}

pub fn load_tensor(path: &Path, order: usize, dims: Option<&[usize]>) -> Result<SparseTensorCoo> {
    let raw = read_coo(path, order)?;
    let dims = resolve_dims(path, &raw, order, dims)?;
    SparseTensorCoo::from_entries(&dims, raw.entries)
}

fn write_lines(path: &Path, dims: &[usize], rows: impl Iterator<Item = (Vec<usize>, f64)>) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    let mut w = BufWriter::new(f);
    let dims_s: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    writeln!(w, "# dims: {}", dims_s.join(" "))?;
    for (idx, v) in rows {
        for i in idx {
            write!(w, "{} ", i + 1)?;
        }
        writeln!(w, "{v:.16e}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_matrix(path: &Path, a: &SparseCoo) -> Result<()> {
    write_lines(
        path,
        &[a.nrows(), a.ncols()],
        a.entries().iter().map(|e| (vec![e.row, e.col], e.value)),
    )
}

pub fn save_tensor(path: &Path, a: &SparseTensorCoo) -> Result<()> {
    write_lines(path, a.dims(), a.iter().map(|(i, v)| (i.to_vec(), v)))
}

const SPLITS: [&str; 3] = ["train", "valid", "test"];

impl MatrixDataset {
    /// Writes `train.txt`, `valid.txt`, `test.txt` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, part) in SPLITS.iter().zip([&self.train, &self.valid, &self.test]) {
            save_matrix(&dir.join(format!("{name}.txt")), part)?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let train = load_matrix(&dir.join("train.txt"), None)?;
        let dims = [train.nrows(), train.ncols()];
        let valid = load_matrix(&dir.join("valid.txt"), Some(dims))?;
        let test = load_matrix(&dir.join("test.txt"), Some(dims))?;
        let ds = Dataset {
            train,
            valid,
            test,
            dims: dims.to_vec(),
            provenance: dir.display().to_string(),
        };
        ds.check_disjoint()?;
        Ok(ds)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (name, part) in SPLITS.iter().zip([&self.train, &self.valid, &self.test]) {
            for e in part.entries() {
                if !seen.insert((e.row, e.col)) {
                    return Err(Error::InvalidArgument(format!(
                        "entry ({}, {}) of the {name} split also appears in an earlier split",
                        e.row + 1,
                        e.col + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

impl TensorDataset {
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, part) in SPLITS.iter().zip([&self.train, &self.valid, &self.test]) {
            save_tensor(&dir.join(format!("{name}.txt")), part)?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path, order: usize) -> Result<Self> {
        let train = load_tensor(&dir.join("train.txt"), order, None)?;
        let dims = train.dims().to_vec();
        let valid = load_tensor(&dir.join("valid.txt"), order, Some(&dims))?;
        let test = load_tensor(&dir.join("test.txt"), order, Some(&dims))?;
        let ds = Dataset {
            train,
            valid,
            test,
            dims,
            provenance: dir.display().to_string(),
        };
        ds.check_disjoint()?;
        Ok(ds)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (name, part) in SPLITS.iter().zip([&self.train, &self.valid, &self.test]) {
            for (idx, _) in part.iter() {
                if !seen.insert(idx.to_vec()) {
                    return Err(Error::InvalidArgument(format!(
                        "entry {idx:?} of the {name} split also appears in an earlier split"
                    )));
                }
            }
        }
        Ok(())
    }
}
