//! Datasets: CSV ingestion, standardization, stratified splits, the planted
//! synthetic benchmark and checkpoint persistence.

mod checkpoint;
mod csv_io;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{HainError, Result};
use crate::numerics::{Matrix, Rng};

pub use checkpoint::{
    decode, encode, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use csv_io::{load_csv, load_csv_with, write_csv, CsvOptions, IngestReport, MissingPolicy};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// Per-feature affine standardization `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Population statistics per column; zero-variance columns get `std = 1`.
    pub fn fit(x: &Matrix) -> Self {
        let (n, d) = x.shape();
        let nf = n.max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / nf).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardization { mean, std }
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(HainError::shape(format!(
                "standardization for {} features applied to {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for r in 0..x.rows() {
            let row = self.apply_row(x.row(r));
            out.row_mut(r).copy_from_slice(&row);
        }
        Ok(out)
    }

    /// Stats equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &Standardization) -> Standardization {
        let mean = self
            .mean
            .iter()
            .zip(&self.std)
            .zip(&next.mean)
            .map(|((m, s), m2)| m + s * m2)
            .collect();
        let std = self.std.iter().zip(&next.std).map(|(s, s2)| s * s2).collect();
        Standardization { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Statistics already applied to `x`, mapping raw values to `x`.
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<usize>, feature_names: Vec<String>, class_names: Vec<String>) -> Result<Self> {
        let ds = Dataset {
            x,
            y,
            feature_names,
            class_names,
            standardization: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.rows() != self.y.len() {
            return Err(HainError::shape(format!(
                "{} rows but {} labels",
                self.x.rows(),
                self.y.len()
            )));
        }
        if self.x.cols() != self.feature_names.len() {
            return Err(HainError::shape(format!(
                "{} columns but {} feature names",
                self.x.cols(),
                self.feature_names.len()
            )));
        }
        if let Some(&bad) = self.y.iter().find(|&&c| c >= self.class_names.len()) {
            return Err(HainError::contract(format!(
                "label {bad} out of range for {} classes",
                self.class_names.len()
            )));
        }
        if !self.x.is_finite() {
            return Err(HainError::contract("feature matrix contains NaN or Inf"));
        }
        let mut names: Vec<&String> = self.feature_names.iter().collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(HainError::Format(format!("duplicate feature name {:?}", w[0])));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.x.rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.n_features();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.x.row(i));
        }
        Dataset {
            x: Matrix::from_vec(indices.len(), d, data).expect("row-aligned"),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Column means of `x`.
    pub fn feature_means(&self) -> Vec<f64> {
        Standardization::fit(&self.x).mean
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for &y in &self.y {
            c[y] += 1;
        }
        c
    }

    /// Applies stored raw-to-model statistics to a raw dataset with the
    /// same columns.
    pub fn with_standardization(&self, stats: &Standardization) -> Result<Dataset> {
        let mut out = self.clone();
        out.x = stats.apply(&self.x)?;
        out.standardization = Some(match &self.standardization {
            Some(prev) => prev.then(stats),
            None => stats.clone(),
        });
        Ok(out)
    }
}

/// Fits per-feature statistics on `dataset` and applies them. Statistics
/// compose with any already applied, so repeating is idempotent.
pub fn standardize(dataset: &Dataset) -> Result<Dataset> {
    if dataset.n_samples() < 2 {
        return Err(HainError::contract("standardization needs at least two samples"));
    }
    let stats = Standardization::fit(&dataset.x);
    dataset.with_standardization(&stats)
}

/// Per-class proportional split. Each class contributes
/// `round(test_fraction * count)` test rows, clamped so both sides keep at
/// least one; rows keep their original relative order.
pub fn stratified_split(dataset: &Dataset, test_fraction: f64, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(HainError::contract(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes()];
    for (i, &y) in dataset.y.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(HainError::contract(format!(
                "class {:?} has a single sample and cannot be split",
                dataset.class_names[c]
            )));
        }
        rng.shuffle(&mut members);
        let n_test = ((test_fraction * members.len() as f64).round() as usize)
            .clamp(usize::from(test_fraction > 0.0), members.len() - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}
