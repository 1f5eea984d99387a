//! Feature matrices, label encodings, anchor sampling and train/test splits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MATRIX_MAGIC: &[u8; 4] = b"DHMX";
const MATRIX_VERSION: u32 = 1;

/// Dense row-major matrix of finite `f64` features, one example per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::validation(format!(
                "feature matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::validation(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite value at row {}, column {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Parse {
                    row: i,
                    msg: format!("expected {cols} columns, found {}", row.len()),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::validation(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.cols, values)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    pub(crate) fn replace_row(&mut self, i: usize, row: &[f64]) {
        self.values[i * self.cols..(i + 1) * self.cols].copy_from_slice(row);
    }
}

/// On-disk encoding of a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Raw,
}

/// Options for CSV parsing.
#[derive(Debug, Clone, Copy, Default)]
pub struct CsvOptions {
    /// Skip the first line.
    pub header: bool,
    /// Treat the last column as the label instead of a feature.
    pub label_last: bool,
}

pub fn load_features(path: impl AsRef<Path>, format: MatrixFormat) -> Result<FeatureMatrix> {
    match format {
        MatrixFormat::Csv => {
            let text = std::fs::read_to_string(path)?;
            parse_csv(&text, CsvOptions::default()).map(|(m, _)| m)
        }
        MatrixFormat::Raw => read_raw(File::open(path)?),
    }
}

/// Loads a CSV file whose last column holds the label.
pub fn load_labeled_csv(
    path: impl AsRef<Path>,
    header: bool,
) -> Result<(FeatureMatrix, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    let (m, labels) = parse_csv(
        &text,
        CsvOptions {
            header,
            label_last: true,
        },
    )?;
    Ok((m, labels.unwrap_or_default()))
}

/// Parses comma-separated numeric rows. Blank lines are ignored; row numbers
/// in errors count data rows from zero.
pub fn parse_csv(text: &str, opts: CsvOptions) -> Result<(FeatureMatrix, Option<Vec<String>>)> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let lines = text
        .lines()
        .skip(usize::from(opts.header))
        .filter(|l| !l.trim().is_empty());
    for (row, line) in lines.enumerate() {
        let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if opts.label_last {
            if fields.len() < 2 {
                return Err(Error::Parse {
                    row,
                    msg: "need at least one feature and a label column".into(),
                });
            }
            labels.push(fields.pop().unwrap_or_default().to_string());
        }
        let parsed = fields
            .iter()
            .enumerate()
            .map(|(col, f)| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    row,
                    msg: format!("column {col}: {e} ({f:?})"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != parsed.len() {
                return Err(Error::Parse {
                    row,
                    msg: format!("expected {} columns, found {}", first.len(), parsed.len()),
                });
            }
        }
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(Error::validation("no data rows"));
    }
    let m = FeatureMatrix::from_rows(&rows)?;
    Ok((m, opts.label_last.then_some(labels)))
}

pub fn save_features_csv(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_features_raw(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_raw(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn write_raw(w: &mut impl Write, m: &FeatureMatrix) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&MATRIX_VERSION.to_le_bytes())?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_raw(r: impl Read) -> Result<FeatureMatrix> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Corrupt("bad DHMX magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != MATRIX_VERSION {
        return Err(Error::Corrupt(format!("unsupported DHMX version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Corrupt("matrix size overflow".into()))?;
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut b8)
            .map_err(|_| Error::Corrupt("truncated DHMX payload".into()))?;
        values.push(f64::from_le_bytes(b8));
    }
    FeatureMatrix::new(rows, cols, values)
}

/// Reads one label per non-empty line.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            out.push(t.to_string());
        }
    }
    Ok(out)
}

/// Maps arbitrary label strings onto dense class ids `0..c`.
///
/// Labels that all parse as integers are ordered numerically, otherwise
/// lexicographically, so `"0".."9"` map onto themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn fit<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut names: Vec<String> = labels
            .iter()
            .map(|s| s.as_ref().to_string())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        if names.iter().all(|s| s.parse::<i64>().is_ok()) {
            names.sort_by_key(|s| s.parse::<i64>().unwrap_or_default());
        }
        Self { names }
    }

    pub fn classes(&self) -> usize {
        self.names.len()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.names.iter().position(|n| n == label)
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        let lookup: BTreeMap<&str, usize> = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        labels
            .iter()
            .enumerate()
            .map(|(row, l)| {
                lookup.get(l.as_ref()).copied().ok_or_else(|| Error::Parse {
                    row,
                    msg: format!("unknown label {:?}", l.as_ref()),
                })
            })
            .collect()
    }
}

/// One-hot label matrix stored as class ids; entry `(i, j)` is 1 iff
/// example `i` has class `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotLabels {
    ids: Vec<usize>,
    classes: usize,
}

pub fn one_hot_encode(labels: &[usize], classes: usize) -> Result<OneHotLabels> {
    if classes == 0 {
        return Err(Error::validation("class count must be positive"));
    }
    if let Some((row, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::validation(format!(
            "class id {bad} at row {row} outside [0, {classes})"
        )));
    }
    Ok(OneHotLabels {
        ids: labels.to_vec(),
        classes,
    })
}

impl OneHotLabels {
    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.ids[i] == j {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), self.classes, |i, j| self.get(i, j))
    }

    /// Row-wise argmax; inverse of [`one_hot_encode`].
    pub fn argmax(&self) -> Vec<usize> {
        self.ids.clone()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &id in &self.ids {
            counts[id] += 1;
        }
        counts
    }

    /// Errors unless every class occurs at least once.
    pub fn check_all_present(&self) -> Result<()> {
        match self.class_counts().iter().position(|&c| c == 0) {
            Some(k) => Err(Error::validation(format!(
                "class {k} has no training examples"
            ))),
            None => Ok(()),
        }
    }

    pub(crate) fn set(&mut self, i: usize, class: usize) {
        self.ids[i] = class;
    }
}

/// Kernel centres drawn from the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub anchors: FeatureMatrix,
    pub indices: Vec<usize>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.anchors.cols()
    }
}

/// Samples `m` distinct rows of `x` uniformly without replacement.
pub fn sample_anchors(x: &FeatureMatrix, m: usize, seed: u64) -> Result<AnchorSet> {
    if m == 0 || m > x.rows() {
        return Err(Error::validation(format!(
            "anchor count {m} must be in [1, {}]",
            x.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = index::sample(&mut rng, x.rows(), m).into_vec();
    let anchors = x.select_rows(&indices)?;
    Ok(AnchorSet { anchors, indices })
}

/// One side of a train/test split.
#[derive(Debug, Clone)]
pub struct Split {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Randomly partitions rows into train and test sets. In stratified mode the
/// test fraction is applied per class, always leaving one example of each
/// class in the training side.
pub fn split(
    x: &FeatureMatrix,
    labels: &[usize],
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Split, Split)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::validation(format!(
            "test fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    if labels.len() != x.rows() {
        return Err(Error::validation(format!(
            "{} labels for {} rows",
            labels.len(),
            x.rows()
        )));
    }
    let n = x.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
    if stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        for (_, mut members) in by_class {
            members.shuffle(&mut rng);
            let k = ((members.len() as f64 * test_fraction).floor() as usize)
                .min(members.len() - 1);
            test_idx.extend_from_slice(&members[..k]);
            train_idx.extend_from_slice(&members[k..]);
        }
    } else {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let k = (n as f64 * test_fraction).round() as usize;
        test_idx.extend_from_slice(&perm[..k.min(n)]);
        train_idx.extend_from_slice(&perm[k.min(n)..]);
    }
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::validation(format!(
            "split of {n} rows at fraction {test_fraction} leaves an empty side"
        )));
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let side = |idx: Vec<usize>| -> Result<Split> {
        Ok(Split {
            features: x.select_rows(&idx)?,
            labels: idx.iter().map(|&i| labels[i]).collect(),
            indices: idx,
        })
    };
    Ok((side(train_idx)?, side(test_idx)?))
}
