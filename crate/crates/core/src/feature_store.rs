//! Labeled feature datasets: class bookkeeping, CSV ingestion and merging.
//!
//! Samples are stored row-major in one contiguous buffer; a feature vector is
//! borrowed as a `&[T]` of length [`FeatureDataset::dim`]. Class labels are kept
//! sorted so that class indices are deterministic for a given label set.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::oversampling::SyntheticSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset<T> {
    dim: usize,
    classes: Vec<String>,
    labels: Vec<usize>,
    data: Vec<T>,
}

/// Per-class sample indices. Exhaustive and disjoint over the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPartition {
    members: Vec<Vec<usize>>,
}

impl ClassPartition {
    pub fn num_classes(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    pub fn count(&self, class: usize) -> usize {
        self.members[class].len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.members.iter().enumerate().map(|(c, m)| (c, m.as_slice()))
    }
}

impl<T: Scalar> FeatureDataset<T> {
    /// An empty dataset with a fixed class list.
    pub fn empty(dim: usize, classes: Vec<String>) -> Result<Self> {
        Self::new(dim, classes, Vec::new(), Vec::new())
    }

    /// Builds a dataset from row-major `data`, validating every invariant.
    pub fn new(dim: usize, classes: Vec<String>, labels: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if data.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: data.len(),
            });
        }
        if let Some(&index) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(Error::ClassOutOfRange {
                index,
                classes: classes.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                sample: pos / dim,
                component: pos % dim,
            });
        }
        Ok(Self {
            dim,
            classes,
            labels,
            data,
        })
    }

    /// Builds a dataset from `(label, vector)` rows. The class list is the
    /// sorted set of distinct labels.
    pub fn from_labeled_rows<S: AsRef<str>>(dim: usize, rows: &[(S, Vec<T>)]) -> Result<Self> {
        let classes: Vec<String> = rows
            .iter()
            .map(|(l, _)| l.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut labels = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (label, v) in rows {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            labels.push(classes.binary_search_by(|c| c.as_str().cmp(label.as_ref())).unwrap());
            data.extend_from_slice(v);
        }
        Self::new(dim, classes, labels, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[T])> {
        self.labels.iter().copied().zip(self.data.chunks_exact(self.dim))
    }

    /// Raw row-major storage.
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn partition_by_class(&self) -> ClassPartition {
        let mut members = vec![Vec::new(); self.classes.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l].push(i);
        }
        ClassPartition { members }
    }

    /// New dataset holding the given samples (in the given order); the class
    /// list is kept so indices stay comparable with `self`.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut labels = Vec::with_capacity(indices.len());
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            labels.push(self.labels[i]);
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            classes: self.classes.clone(),
            labels,
            data,
        }
    }

    /// Appends the synthetic vectors after the original samples, class by
    /// class in ascending class order. Neither input is modified.
    pub fn merge(&self, synth: &SyntheticSet<T>) -> Result<Self> {
        if synth.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: synth.dim(),
            });
        }
        let mut out = self.clone();
        for (class, vectors) in synth.iter() {
            if class >= self.classes.len() {
                return Err(Error::ClassOutOfRange {
                    index: class,
                    classes: self.classes.len(),
                });
            }
            for v in vectors.vectors() {
                out.labels.push(class);
                out.data.extend_from_slice(v);
            }
        }
        Ok(out)
    }

    /// Converts every component to another scalar type.
    pub fn cast<U: Scalar>(&self) -> FeatureDataset<U> {
        FeatureDataset {
            dim: self.dim,
            classes: self.classes.clone(),
            labels: self.labels.clone(),
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Free-function form of [`FeatureDataset::partition_by_class`].
pub fn partition_by_class<T: Scalar>(dataset: &FeatureDataset<T>) -> ClassPartition {
    dataset.partition_by_class()
}

/// Free-function form of [`FeatureDataset::merge`].
pub fn merge<T: Scalar>(dataset: &FeatureDataset<T>, synth: &SyntheticSet<T>) -> Result<FeatureDataset<T>> {
    dataset.merge(synth)
}

pub(crate) fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parsed CSV body: header width, label column, numeric columns and any
/// trailing integer column requested by `extra_int_column`.
pub(crate) struct RawTable<T> {
    pub header: Option<Vec<String>>,
    pub width: usize,
    pub rows: Vec<(String, Vec<T>)>,
}

fn is_header<T: Scalar>(fields: &[&str]) -> bool {
    fields.len() > 1 && fields[1..].iter().all(|f| f.trim().parse::<T>().is_err())
}

pub(crate) fn read_table<T: Scalar>(path: &Path) -> Result<RawTable<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();

    let Some(&(first_no, first)) = lines.peek() else {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    };
    let first_fields: Vec<&str> = first.split(',').collect();
    let width = first_fields.len();
    if width < 2 {
        return Err(parse_err(path, first_no, "expected a label column and at least one feature column"));
    }
    let header = if is_header::<T>(&first_fields) {
        lines.next();
        Some(first_fields.iter().map(|s| s.trim().to_string()).collect())
    } else {
        None
    };

    let mut rows = Vec::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(parse_err(
                path,
                line_no,
                format!("ragged row: {} columns, expected {}", fields.len(), width),
            ));
        }
        let label = fields[0].trim();
        if label.is_empty() {
            return Err(parse_err(path, line_no, "empty class label"));
        }
        let mut values = Vec::with_capacity(width - 1);
        for (col, cell) in fields[1..].iter().enumerate() {
            let v: T = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("non-numeric cell {:?} in column {}", cell, col + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(path, line_no, format!("non-finite value in column {}", col + 1)));
            }
            values.push(v);
        }
        rows.push((label.to_string(), values));
    }
    Ok(RawTable { header, width, rows })
}

/// Loads a `label,f0,f1,...` CSV. A header line is detected and skipped;
/// class indices follow the lexicographic order of the distinct labels.
pub fn load_features_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureDataset<T>> {
    let path = path.as_ref();
    let table = read_table::<T>(path)?;
    let dim = table.width - 1;
    FeatureDataset::from_labeled_rows(dim, &table.rows)
}

pub(crate) fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp: PathBuf = path.with_file_name(format!(".{file_name}.tmp"));
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
        drop(w);
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub(crate) fn feature_header(dim: usize) -> String {
    let mut h = String::from("label");
    for j in 0..dim {
        h.push_str(&format!(",f{j}"));
    }
    h
}

pub(crate) fn write_row<T: Scalar>(w: &mut dyn Write, label: &str, values: &[T]) -> std::io::Result<()> {
    w.write_all(label.as_bytes())?;
    for v in values {
        // `Display` for floats is the shortest string that parses back exactly.
        write!(w, ",{v}")?;
    }
    Ok(())
}

/// Writes the dataset as `label,f0,...,f{d-1}` with round-trip float text.
pub fn save_features_csv<T: Scalar>(dataset: &FeatureDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), |w| {
        writeln!(w, "{}", feature_header(dataset.dim()))?;
        for (label, row) in dataset.rows() {
            write_row(w, &dataset.classes()[label], row)?;
            writeln!(w)?;
        }
        Ok(())
    })
}
