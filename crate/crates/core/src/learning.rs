//! Linear readout: ridge regression, capacity, and singular-value analysis.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, MatRef, Par, Side};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::reservoir::FeatureMatrix;
use crate::tasks::Targets;

/// Readout weights, bias weight last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    pub weights: Vec<f64>,
    pub beta: f64,
}

impl ReadoutModel {
    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Contiguous wash-out, training, and test segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitProtocol {
    pub washout: usize,
    pub train: usize,
    pub test: usize,
}

impl SplitProtocol {
    pub fn total(&self) -> usize {
        self.washout + self.train + self.test
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        self.washout..self.washout + self.train
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.washout + self.train..self.total()
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.test == 0 {
            return Err(invalid("protocol", "train and test lengths must be positive"));
        }
        Ok(())
    }
}

/// Cholesky factor of `X^T X + β I`, reusable across target vectors.
pub struct RidgeSolver<'a> {
    x: MatRef<'a, f64>,
    llt: faer::linalg::solvers::Llt<f64>,
    beta: f64,
}

impl<'a> RidgeSolver<'a> {
    pub fn new(x: MatRef<'a, f64>, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(invalid("beta", format!("{beta} must be finite and non-negative")));
        }
        let p = x.ncols();
        let mut normal = Mat::<f64>::zeros(p, p);
        matmul(normal.as_mut(), Accum::Replace, x.transpose(), x, 1.0, Par::Seq);
        for i in 0..p {
            normal[(i, i)] += beta;
        }
        let llt = normal.llt(Side::Lower).map_err(|_| {
            if beta == 0.0 {
                Error::SingularNormalMatrix
            } else {
                Error::LinearAlgebra("normal matrix is not positive definite".into())
            }
        })?;
        Ok(Self { x, llt, beta })
    }

    pub fn fit(&self, y: &[f64]) -> Result<ReadoutModel> {
        if self.x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} rows but {} targets", self.x.nrows(), y.len())));
        }
        let yv = Mat::from_fn(y.len(), 1, |i, _| y[i]);
        let mut rhs = Mat::<f64>::zeros(self.x.ncols(), 1);
        matmul(rhs.as_mut(), Accum::Replace, self.x.transpose(), yv.as_ref(), 1.0, Par::Seq);
        self.llt.solve_in_place(rhs.as_mut());
        let weights: Vec<f64> = rhs.col(0).iter().copied().collect();
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::SingularNormalMatrix);
        }
        Ok(ReadoutModel { weights, beta: self.beta })
    }
}

/// `w = (X^T X + β I)^{-1} X^T y` by Cholesky on the normal matrix.
pub fn ridge_fit(x: MatRef<'_, f64>, y: &[f64], beta: f64) -> Result<ReadoutModel> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    RidgeSolver::new(x, beta)?.fit(y)
}

pub fn predict(model: &ReadoutModel, x: MatRef<'_, f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.weights.len() {
        return Err(Error::Shape(format!("{} columns but {} weights", x.ncols(), model.weights.len())));
    }
    let w = Mat::from_fn(model.weights.len(), 1, |i, _| model.weights[i]);
    let mut out = Mat::<f64>::zeros(x.nrows(), 1);
    matmul(out.as_mut(), Accum::Replace, x, w.as_ref(), 1.0, Par::Seq);
    Ok(out.col(0).iter().copied().collect())
}

/// Squared Pearson correlation. `degenerate` marks a constant series, for
/// which the value is set to 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capacity {
    pub value: f64,
    pub degenerate: bool,
}

pub fn capacity(predicted: &[f64], target: &[f64]) -> Result<Capacity> {
    if predicted.len() != target.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", predicted.len(), target.len())));
    }
    if predicted.len() < 2 {
        return Err(invalid("length", "capacity needs at least two points"));
    }
    let n = predicted.len() as f64;
    let mp = predicted.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for (p, t) in predicted.iter().zip(target) {
        let (dp, dt) = (p - mp, t - mt);
        cov += dp * dt;
        vp += dp * dp;
        vt += dt * dt;
    }
    let scale = |m: f64, xs: &[f64]| xs.iter().fold(m.abs(), |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    let flat = |v: f64, s: f64| v.sqrt() <= 1e-12 * s * n.sqrt();
    if flat(vp, scale(mp, predicted)) || flat(vt, scale(mt, target)) {
        return Ok(Capacity {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Capacity {
        value: (cov * cov / (vp * vt)).clamp(0.0, 1.0),
        degenerate: false,
    })
}

/// Train/test capacities of one fitted readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub train: Capacity,
    pub test: Capacity,
    pub model: ReadoutModel,
}

/// Fits on the training segment and scores both segments. Rows whose target is
/// undefined (the first `τ` of a delay task) are dropped from the segments.
pub fn evaluate_task(features: &FeatureMatrix, targets: &Targets, split: SplitProtocol, beta: f64) -> Result<Evaluation> {
    evaluate_tasks(features, std::slice::from_ref(targets), split, beta)?.pop().expect("one target")
}

/// [`evaluate_task`] for several target sequences over the same features; the
/// normal matrix is factored once per distinct training segment.
pub fn evaluate_tasks(features: &FeatureMatrix, targets: &[Targets], split: SplitProtocol, beta: f64) -> Result<Vec<Result<Evaluation>>> {
    split.validate()?;
    if features.rows() < split.total() {
        return Err(Error::InsufficientRows {
            needed: split.total(),
            available: features.rows(),
        });
    }
    let segment = |range: std::ops::Range<usize>, t: &Targets| -> Result<usize> {
        if t.len() < split.total() {
            return Err(Error::InsufficientRows {
                needed: split.total(),
                available: t.len(),
            });
        }
        let start = range.start.max(t.first_valid);
        if start + 2 > range.end {
            return Err(Error::InsufficientRows {
                needed: 2,
                available: range.end.saturating_sub(start),
            });
        }
        Ok(start)
    };
    let (train, test) = (split.train_range(), split.test_range());
    let mut solvers: Vec<(usize, RidgeSolver<'_>)> = Vec::new();
    let mut out = Vec::with_capacity(targets.len());
    for t in targets {
        let result = (|| {
            let train_start = segment(train.clone(), t)?;
            let test_start = segment(test.clone(), t)?;
            let x_train = features.row_range(train_start, train.end);
            let solver = match solvers.iter().position(|(s, _)| *s == train_start) {
                Some(i) => &solvers[i].1,
                None => {
                    solvers.push((train_start, RidgeSolver::new(x_train, beta)?));
                    &solvers.last().expect("just pushed").1
                }
            };
            let y_train = &t.values[train_start..train.end];
            let y_test = &t.values[test_start..test.end];
            let model = solver.fit(y_train)?;
            let train_c = capacity(&predict(&model, x_train)?, y_train)?;
            let test_c = capacity(&predict(&model, features.row_range(test_start, test.end))?, y_test)?;
            Ok(Evaluation {
                train: train_c,
                test: test_c,
                model,
            })
        })();
        out.push(result);
    }
    Ok(out)
}

/// Descending singular values with the count below `relative_threshold` times
/// the largest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularSpectrum {
    pub values: Vec<f64>,
    pub relative_threshold: f64,
    pub redundant: usize,
}

pub const REDUNDANCY_THRESHOLD: f64 = 1e-10;

pub fn singular_value_spectrum(x: MatRef<'_, f64>) -> Result<SingularSpectrum> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(invalid("matrix", "singular values of an empty matrix"));
    }
    let mut values = x.singular_values().map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    values.sort_by(|a, b| b.total_cmp(a));
    let cut = REDUNDANCY_THRESHOLD * values[0];
    let redundant = values.iter().filter(|&&s| s < cut).count();
    Ok(SingularSpectrum {
        values,
        relative_threshold: REDUNDANCY_THRESHOLD,
        redundant,
    })
}
