//! Datasets: in-memory feature rows with labels, LibSVM text I/O and the
//! synthetic least-squares generators.
//!
//! Synthetic data is drawn from `ChaCha8Rng` (a counter-based generator)
//! seeded with `seed_from_u64`, so a given seed produces the same dataset on
//! every platform.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Features {
    /// Row-major `n x d`.
    Dense(Vec<f64>),
    /// CSR with 0-based column indices, ascending within a row.
    Sparse {
        indptr: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    },
}

/// A borrowed feature row.
#[derive(Debug, Clone, Copy)]
pub enum Row<'a> {
    Dense(&'a [f64]),
    Sparse { indices: &'a [u32], values: &'a [f64] },
}

impl Row<'_> {
    #[inline]
    pub fn dot(&self, x: &[f64]) -> f64 {
        match *self {
            Row::Dense(z) => crate::vecops::dot(z, x),
            Row::Sparse { indices, values } => indices
                .iter()
                .zip(values)
                .map(|(&j, v)| v * x[j as usize])
                .sum(),
        }
    }

    /// `out += alpha * z`
    #[inline]
    pub fn axpy_into(&self, alpha: f64, out: &mut [f64]) {
        match *self {
            Row::Dense(z) => crate::vecops::axpy(alpha, z, out),
            Row::Sparse { indices, values } => {
                for (&j, v) in indices.iter().zip(values) {
                    out[j as usize] += alpha * v;
                }
            }
        }
    }

    pub fn norm_sq(&self) -> f64 {
        match *self {
            Row::Dense(z) => crate::vecops::dot(z, z),
            Row::Sparse { values, .. } => crate::vecops::dot(values, values),
        }
    }

    /// Nonzero `(column, value)` pairs in ascending column order.
    pub fn entries(&self) -> Vec<(usize, f64)> {
        match *self {
            Row::Dense(z) => z
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| (j, *v))
                .collect(),
            Row::Sparse { indices, values } => indices
                .iter()
                .zip(values)
                .map(|(&j, &v)| (j as usize, v))
                .collect(),
        }
    }
}

/// `n` labeled feature rows of dimension `d`. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Features,
    labels: Vec<f64>,
    d: usize,
}

impl Dataset {
    pub fn from_dense(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Dataset("dataset must have at least one row".into()));
        }
        if labels.len() != n {
            return Err(Error::Dataset(format!("{} rows but {} labels", n, labels.len())));
        }
        let d = rows[0].len();
        let mut flat = Vec::with_capacity(n * d);
        for row in &rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            flat.extend_from_slice(row);
        }
        Self::check_labels(&labels)?;
        Ok(Dataset { features: Features::Dense(flat), labels, d })
    }

    /// Build from sparse rows of 0-based `(column, value)` pairs.
    pub fn from_sparse(rows: Vec<Vec<(usize, f64)>>, labels: Vec<f64>, d: usize) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Dataset("dataset must have at least one row".into()));
        }
        if labels.len() != n {
            return Err(Error::Dataset(format!("{} rows but {} labels", n, labels.len())));
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            let mut prev: Option<usize> = None;
            for (j, v) in row {
                if j >= d {
                    return Err(Error::Dataset(format!("column {} out of range for d = {}", j, d)));
                }
                if prev.is_some_and(|p| j <= p) {
                    return Err(Error::Dataset("column indices must be strictly ascending".into()));
                }
                prev = Some(j);
                indices.push(j as u32);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self::check_labels(&labels)?;
        Ok(Dataset { features: Features::Sparse { indptr, indices, values }, labels, d })
    }

    fn check_labels(labels: &[f64]) -> Result<()> {
        if labels.iter().any(|y| !y.is_finite()) {
            return Err(Error::Dataset("labels must be finite".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.features, Features::Sparse { .. })
    }

    #[inline]
    pub fn row(&self, i: usize) -> Row<'_> {
        match &self.features {
            Features::Dense(flat) => Row::Dense(&flat[i * self.d..(i + 1) * self.d]),
            Features::Sparse { indptr, indices, values } => {
                let (a, b) = (indptr[i], indptr[i + 1]);
                Row::Sparse { indices: &indices[a..b], values: &values[a..b] }
            }
        }
    }

    /// Dense copy of row `i`.
    pub fn row_dense(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.row(i).axpy_into(1.0, &mut out);
        out
    }

    /// Every row scaled to unit Euclidean norm; zero rows are left alone.
    pub fn row_normalize(&self) -> Dataset {
        let mut out = self.clone();
        match &mut out.features {
            Features::Dense(flat) => {
                for row in flat.chunks_mut(self.d.max(1)) {
                    let nrm = crate::vecops::norm(row);
                    if nrm > 0.0 {
                        row.iter_mut().for_each(|v| *v /= nrm);
                    }
                }
            }
            Features::Sparse { indptr, values, .. } => {
                for w in indptr.windows(2) {
                    let row = &mut values[w[0]..w[1]];
                    let nrm = crate::vecops::norm(row);
                    if nrm > 0.0 {
                        row.iter_mut().for_each(|v| *v /= nrm);
                    }
                }
            }
        }
        out
    }

    /// Write in LibSVM format: `label idx:val ...` with 1-based indices,
    /// zeros omitted. Values use the shortest round-trip representation.
    pub fn write_libsvm<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.n() {
            write!(w, "{}", self.labels[i])?;
            for (j, v) in self.row(i).entries() {
                write!(w, " {}:{}", j + 1, v)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// How raw labels are mapped when parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelMap {
    #[default]
    Keep,
    /// `0 -> -1`, everything else unchanged.
    ZeroToNegative,
    /// Integer class labels to `+1` (even) / `-1` (odd).
    EvenOdd,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Feature dimension; defaults to the largest index seen.
    pub d: Option<usize>,
    pub labels: LabelMap,
}

/// Parse LibSVM text. Blank lines and `#` comments are skipped.
pub fn parse_libsvm<R: BufRead>(reader: R, opts: ParseOptions) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_col = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let content = match line.find('#') {
            Some(p) => &line[..p],
            None => &line[..],
        };
        let mut tokens = content.split_whitespace();
        let Some(label_tok) = tokens.next() else { continue };
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let raw: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("bad label {:?}", label_tok)))?;
        if !raw.is_finite() {
            return Err(err("label is not finite".into()));
        }
        let label = match opts.labels {
            LabelMap::Keep => raw,
            LabelMap::ZeroToNegative if raw == 0.0 => -1.0,
            LabelMap::ZeroToNegative => raw,
            LabelMap::EvenOdd => {
                if raw.fract() != 0.0 {
                    return Err(err(format!("non-integer class label {}", raw)));
                }
                if (raw as i64) % 2 == 0 { 1.0 } else { -1.0 }
            }
        };
        let mut row = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected idx:val, got {:?}", tok)))?;
            let idx: usize = idx.parse().map_err(|_| err(format!("bad index {:?}", idx)))?;
            let val: f64 = val.parse().map_err(|_| err(format!("bad value {:?}", val)))?;
            if idx == 0 {
                return Err(err("indices are 1-based".into()));
            }
            if idx <= prev {
                return Err(err(format!("index {} not ascending", idx)));
            }
            prev = idx;
            max_col = max_col.max(idx);
            row.push((idx - 1, val));
        }
        rows.push(row);
        labels.push(label);
    }
    let d = match opts.d {
        Some(d) if d < max_col => {
            return Err(Error::Dataset(format!("index {} exceeds configured d = {}", max_col, d)))
        }
        Some(d) => d,
        None => max_col,
    };
    Dataset::from_sparse(rows, labels, d)
}

/// Two uniform `[0, 1]` features with `y = a z1 + b z2 + noise`, noise
/// standard normal.
pub fn gen_sim1(n: usize, a: f64, b: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z1: f64 = rng.gen();
        let z2: f64 = rng.gen();
        let eps: f64 = rng.sample(StandardNormal);
        rows.push(vec![z1, z2]);
        labels.push(a * z1 + b * z2 + eps);
    }
    Dataset::from_dense(rows, labels)
}

/// Uniform `[0, 1]` features with column `j` scaled by `cond^(-j/(d-1))`,
/// labels `y = sum_j z_j + noise` (all-ones true weights).
pub fn gen_sim2(n: usize, d: usize, cond: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if d < 2 {
        return Err(Error::Config("d must be at least 2".into()));
    }
    if !(cond >= 1.0) || !cond.is_finite() {
        return Err(Error::Config("cond must be a finite value >= 1".into()));
    }
    let scales: Vec<f64> = (0..d)
        .map(|j| cond.powf(-(j as f64) / (d as f64 - 1.0)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = scales.iter().map(|s| s * rng.gen::<f64>()).collect();
        let eps: f64 = rng.sample(StandardNormal);
        labels.push(row.iter().sum::<f64>() + eps);
        rows.push(row);
    }
    Dataset::from_dense(rows, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Dataset> {
        parse_libsvm(s.as_bytes(), ParseOptions::default())
    }

    #[test]
    fn parses_single_line() {
        let ds = parse("+1 1:0.5 3:1.0").unwrap();
        assert_eq!(ds.n(), 1);
        assert_eq!(ds.d(), 3);
        assert_eq!(ds.label(0), 1.0);
        assert_eq!(ds.row(0).entries(), vec![(0, 0.5), (2, 1.0)]);
    }

    #[test]
    fn label_only_line_is_zero_row() {
        let ds = parse_libsvm("-1".as_bytes(), ParseOptions { d: Some(4), ..Default::default() }).unwrap();
        assert_eq!(ds.label(0), -1.0);
        assert_eq!(ds.row_dense(0), vec![0.0; 4]);
    }

    #[test]
    fn dimension_is_max_over_lines() {
        let ds = parse("1 2:1\n-1 1:3 5:2 # comment\n\n").unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.d(), 5);
    }

    #[test]
    fn rejects_bad_tokens_with_line_numbers() {
        assert!(matches!(parse("1 1:1\nfoo 1:2"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("1 1:x"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("1 3:1 2:1"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("1 2:1 2:1"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("1 0:1"), Err(Error::Parse { .. })));
        assert!(matches!(parse("1 nocolon"), Err(Error::Parse { .. })));
    }

    #[test]
    fn label_maps() {
        let opts = ParseOptions { labels: LabelMap::ZeroToNegative, ..Default::default() };
        let ds = parse_libsvm("0 1:1\n1 1:1".as_bytes(), opts).unwrap();
        assert_eq!(ds.labels(), &[-1.0, 1.0]);
        let opts = ParseOptions { labels: LabelMap::EvenOdd, ..Default::default() };
        let ds = parse_libsvm("0 1:1\n7 1:1\n4 1:1".as_bytes(), opts).unwrap();
        assert_eq!(ds.labels(), &[1.0, -1.0, 1.0]);
    }

    #[test]
    fn row_normalize_cases() {
        let ds = Dataset::from_dense(vec![vec![3.0, 4.0], vec![0.0, 0.0]], vec![1.0, 1.0]).unwrap();
        let once = ds.row_normalize();
        assert_eq!(once.row_dense(0), vec![0.6, 0.8]);
        assert_eq!(once.row_dense(1), vec![0.0, 0.0]);
        let twice = once.row_normalize();
        for i in 0..2 {
            for (a, b) in once.row_dense(i).iter().zip(twice.row_dense(i)) {
                assert!((a - b).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(gen_sim1(100, 1.0, 5.0, 3).unwrap(), gen_sim1(100, 1.0, 5.0, 3).unwrap());
        assert_ne!(gen_sim1(100, 1.0, 5.0, 3).unwrap(), gen_sim1(100, 1.0, 5.0, 4).unwrap());
        assert_eq!(gen_sim2(50, 5, 10.0, 9).unwrap(), gen_sim2(50, 5, 10.0, 9).unwrap());
    }

    #[test]
    fn sim2_cond_one_is_unscaled() {
        let ds = gen_sim2(200, 4, 1.0, 1).unwrap();
        for i in 0..ds.n() {
            for v in ds.row_dense(i) {
                assert!((0.0..1.0).contains(&v));
            }
        }
    }

    #[test]
    fn generator_column_means() {
        let ds = gen_sim1(10_000, 1.0, 1.0, 11).unwrap();
        for j in 0..2 {
            let mean: f64 = (0..ds.n()).map(|i| ds.row_dense(i)[j]).sum::<f64>() / ds.n() as f64;
            assert!((0.45..=0.55).contains(&mean), "col {} mean {}", j, mean);
        }
        let (d, cond) = (20, 1000.0f64);
        let ds = gen_sim2(10_000, d, cond, 12).unwrap();
        for j in 0..d {
            let s = cond.powf(-(j as f64) / (d as f64 - 1.0));
            let mean: f64 = (0..ds.n()).map(|i| ds.row_dense(i)[j]).sum::<f64>() / ds.n() as f64;
            assert!(mean >= 0.45 * s && mean <= 0.55 * s, "col {} mean {} scale {}", j, mean, s);
        }
    }

    #[test]
    fn generator_errors() {
        assert!(gen_sim1(0, 1.0, 1.0, 0).is_err());
        assert!(gen_sim2(10, 1, 10.0, 0).is_err());
        assert!(gen_sim2(10, 3, 0.5, 0).is_err());
    }
}
