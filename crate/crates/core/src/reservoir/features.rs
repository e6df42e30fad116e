use std::io::Write;

use faer::{Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::observables::ObservableSet;

/// Design matrix `L × (V M + 1)`: one row per input step, features ordered
/// virtual-node-major, trailing bias column fixed at 1.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    data: Mat<f64>,
    labels: Vec<String>,
    washout: usize,
    virtual_nodes: usize,
    observables: usize,
}

/// Sidecar record written next to a feature CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMetadata {
    pub config_hash: String,
    pub rows: usize,
    pub columns: usize,
    pub observables: usize,
    pub virtual_nodes: usize,
    pub washout: usize,
    pub labels: Vec<String>,
}

/// `{family}_{i}_{j}_v{v}` for `v = 1..=V`, then `bias`.
pub fn feature_labels(observables: &ObservableSet, virtual_nodes: usize) -> Vec<String> {
    let base = observables.labels();
    let mut labels = Vec::with_capacity(virtual_nodes * base.len() + 1);
    for v in 1..=virtual_nodes {
        labels.extend(base.iter().map(|l| format!("{l}_v{v}")));
    }
    labels.push("bias".to_string());
    labels
}

impl FeatureMatrix {
    /// Builds from raw feature rows (without bias), each of length `V M`.
    pub fn from_rows(rows: &[Vec<f64>], observables: &ObservableSet, virtual_nodes: usize, washout: usize) -> Result<Self> {
        let width = virtual_nodes * observables.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::Shape(format!("feature row of length {}, expected {width}", bad.len())));
        }
        let data = Mat::from_fn(rows.len(), width + 1, |i, j| if j == width { 1.0 } else { rows[i][j] });
        Self::from_parts(data, feature_labels(observables, virtual_nodes), washout, virtual_nodes, observables.len())
    }

    pub(crate) fn from_parts(
        data: Mat<f64>,
        labels: Vec<String>,
        washout: usize,
        virtual_nodes: usize,
        observables: usize,
    ) -> Result<Self> {
        let cols = virtual_nodes * observables + 1;
        if data.ncols() != cols || labels.len() != cols {
            return Err(Error::Shape(format!(
                "{} columns and {} labels for V={virtual_nodes}, M={observables}",
                data.ncols(),
                labels.len()
            )));
        }
        if (0..data.nrows()).any(|i| data[(i, cols - 1)] != 1.0) {
            return Err(Error::Shape("bias column must be constant 1".into()));
        }
        let washout = washout.min(data.nrows());
        Ok(Self {
            data,
            labels,
            washout,
            virtual_nodes,
            observables,
        })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> MatRef<'_, f64> {
        self.data.as_ref()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[(row, col)]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.data.row(row).iter().copied().collect()
    }

    /// Rows `start..end`, bias included.
    pub fn row_range(&self, start: usize, end: usize) -> MatRef<'_, f64> {
        self.data.as_ref().subrows(start, end - start)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of leading rows flagged as transient.
    pub fn washout(&self) -> usize {
        self.washout
    }

    pub fn virtual_nodes(&self) -> usize {
        self.virtual_nodes
    }

    pub fn observable_count(&self) -> usize {
        self.observables
    }

    /// Index of the bias column.
    pub fn bias_column(&self) -> usize {
        self.cols() - 1
    }

    pub fn metadata(&self, config_hash: &str) -> FeatureMetadata {
        FeatureMetadata {
            config_hash: config_hash.to_string(),
            rows: self.rows(),
            columns: self.cols(),
            observables: self.observables,
            virtual_nodes: self.virtual_nodes,
            washout: self.washout,
            labels: self.labels.clone(),
        }
    }

    /// CSV with a leading `step` column, then one column per label.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["step".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.rows() {
            let mut rec = vec![i.to_string()];
            rec.extend((0..self.cols()).map(|j| format!("{:e}", self.data[(i, j)])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Adds independent `N(0, 1/N_m)` draws to every non-bias entry, row by row.
pub fn apply_measurement_noise(features: &FeatureMatrix, shots: u64, seed: u64) -> Result<FeatureMatrix> {
    if shots == 0 {
        return Err(invalid("shots", "the number of measurements must be at least 1"));
    }
    let normal = Normal::new(0.0, 1.0 / (shots as f64).sqrt()).map_err(|e| invalid("shots", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = features.clone();
    let bias = features.bias_column();
    for i in 0..out.rows() {
        for j in 0..bias {
            out.data[(i, j)] += normal.sample(&mut rng);
        }
    }
    Ok(out)
}
