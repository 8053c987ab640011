//! Numeric CSV ingestion, z-score standardization and the seeded train/test
//! split.

use std::io;
use std::path::Path;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    MissingFile(String),
    /// `row` is the 0-based data row (header excluded), `col` the 0-based CSV
    /// column.
    #[error("non-numeric cell at row {row}, column {col}: {value:?}")]
    NonNumericCell {
        row: usize,
        col: usize,
        value: String,
    },
    #[error("row {row} has {found} cells, header has {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("label column {0:?} not found in header")]
    UnknownLabelColumn(String),
    #[error("label {label:?} at row {row} is not one of the known classes")]
    UnknownLabel { row: usize, label: String },
    #[error("dataset is empty")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Per-feature `(mean, std)` used for z-scoring; `std` is the population
/// standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub params: Vec<(f64, f64)>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let n_features = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let params = (0..n_features)
            .map(|f| {
                let mean = rows.iter().map(|r| r[f]).sum::<f64>() / n;
                let var = rows.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect();
        Standardizer { params }
    }

    pub fn transform_value(&self, f: usize, v: f64) -> f64 {
        let (mean, std) = self.params[f];
        if std == 0.0 {
            0.0
        } else {
            (v - mean) / std
        }
    }

    pub fn inverse_value(&self, f: usize, z: f64) -> f64 {
        let (mean, std) = self.params[f];
        z * std + mean
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(f, &v)| self.transform_value(f, v))
            .collect()
    }

    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(f, &z)| self.inverse_value(f, z))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Row-major feature matrix.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    /// Original label strings, indexed by class id.
    pub class_names: Vec<String>,
    pub label_column: String,
    /// Present once the data has been standardized.
    pub standardization: Option<Standardizer>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.features.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn column(&self, f: usize) -> impl Iterator<Item = f64> + '_ {
        self.features.iter().map(move |r| r[f])
    }

    /// Observed `(min, max)` of every feature.
    pub fn feature_ranges(&self) -> Vec<(f64, f64)> {
        (0..self.n_features())
            .map(|f| {
                self.column(f)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .collect()
    }

    /// Per-feature population standard deviation.
    pub fn feature_stds(&self) -> Vec<f64> {
        Standardizer::fit(&self.features)
            .params
            .into_iter()
            .map(|(_, s)| s)
            .collect()
    }

    fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            label_column: self.label_column.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Applies `s` to every row and records it.
    pub fn apply_standardizer(&self, s: &Standardizer) -> Dataset {
        Dataset {
            features: self.features.iter().map(|r| s.transform_row(r)).collect(),
            standardization: Some(s.clone()),
            ..self.clone()
        }
    }

    /// Writes the dataset back out with the label column first. Labels are
    /// written as class names.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), DataError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![self.label_column.clone()];
        header.extend(self.feature_names.iter().cloned());
        out.write_record(&header)?;
        for (row, &label) in self.features.iter().zip(&self.labels) {
            let mut rec = vec![self.class_names[label].clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Loads a headed CSV. Every column except `label_column` must be numeric;
/// labels are mapped to class ids in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset, DataError> {
    let file = open(path.as_ref())?;
    read_csv(file, label_column, None)
}

/// Like [`load_csv`], but maps labels through a fixed class vocabulary so
/// class ids agree with a previously trained model.
pub fn load_csv_with_classes(
    path: impl AsRef<Path>,
    label_column: &str,
    classes: &[String],
) -> Result<Dataset, DataError> {
    let file = open(path.as_ref())?;
    read_csv(file, label_column, Some(classes))
}

fn open(path: &Path) -> Result<std::fs::File, DataError> {
    std::fs::File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => DataError::MissingFile(path.display().to_string()),
        _ => DataError::Io(e),
    })
}

pub fn read_csv<R: io::Read>(
    reader: R,
    label_column: &str,
    classes: Option<&[String]>,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::UnknownLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut class_names: Vec<String> = classes.map(|c| c.to_vec()).unwrap_or_default();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(DataError::RaggedRow {
                row,
                expected: header.len(),
                found: rec.len(),
            });
        }
        let mut values = Vec::with_capacity(feature_names.len());
        for (col, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            if col == label_idx {
                let id = match class_names.iter().position(|c| c == cell) {
                    Some(id) => id,
                    None if classes.is_none() => {
                        class_names.push(cell.to_string());
                        class_names.len() - 1
                    }
                    None => {
                        return Err(DataError::UnknownLabel {
                            row,
                            label: cell.to_string(),
                        })
                    }
                };
                labels.push(id);
            } else {
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| DataError::NonNumericCell {
                        row,
                        col,
                        value: cell.to_string(),
                    })?;
                values.push(v);
            }
        }
        features.push(values);
    }
    Ok(Dataset {
        features,
        labels,
        feature_names,
        class_names,
        label_column: label_column.to_string(),
        standardization: None,
    })
}

/// Numeric rows of a headed CSV, skipping `label_column` if the header has
/// it. Used for unlabelled inputs such as query points or background data.
pub fn read_feature_rows<R: io::Read>(
    reader: R,
    label_column: &str,
) -> Result<Vec<Vec<f64>>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let skip = header.iter().position(|h| h.trim() == label_column);
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(DataError::RaggedRow {
                row,
                expected: header.len(),
                found: rec.len(),
            });
        }
        let values = rec
            .iter()
            .enumerate()
            .filter(|&(col, _)| Some(col) != skip)
            .map(|(col, cell)| {
                let cell = cell.trim();
                cell.parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| DataError::NonNumericCell {
                        row,
                        col,
                        value: cell.to_string(),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(values);
    }
    Ok(rows)
}

pub fn load_feature_rows(
    path: impl AsRef<Path>,
    label_column: &str,
) -> Result<Vec<Vec<f64>>, DataError> {
    read_feature_rows(open(path.as_ref())?, label_column)
}

/// Z-scores every column with parameters fitted on `d` itself. Constant
/// columns become all zeros.
pub fn standardize(d: &Dataset) -> Dataset {
    d.apply_standardizer(&Standardizer::fit(&d.features))
}

/// Shuffles row indices with a seeded Fisher-Yates pass (for `i` from `n-1`
/// down to 1, swap `i` with `next_u64() % (i + 1)`), sends the first
/// `ceil(fraction * n)` rows to train, fits standardization on train and
/// applies it to both partitions.
pub fn split(d: &Dataset, fraction: f64, seed: u64) -> (Dataset, Dataset) {
    assert!(
        fraction > 0.0 && fraction < 1.0,
        "split fraction must lie in (0, 1), got {fraction}"
    );
    let perm = shuffled_indices(d.n_samples(), seed);
    let n_train = (fraction * d.n_samples() as f64).ceil() as usize;
    let train = d.select(&perm[..n_train]);
    let test = d.select(&perm[n_train..]);
    let s = Standardizer::fit(&train.features);
    (train.apply_standardizer(&s), test.apply_standardizer(&s))
}

pub(crate) fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = SplitMix64::stream(seed, u64::MAX);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        idx.swap(i, j);
    }
    idx
}
