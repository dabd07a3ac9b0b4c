//! Accuracy bookkeeping, average accuracy `A` and backward transfer `BW`.
//!
//! `a[t][j]` is the accuracy on task `t` measured with the model obtained
//! after task `j` (`j ≥ t`, zero-based here). `A` averages the final column;
//! `BW` averages `a[t][t] − a[t][q−1]`, so positive values mean forgetting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::stream::{LabelMap, Sample};
use crate::tensor::Tensor;

/// Upper-triangular `q×q` table of checkpoint accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    entries: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(q: usize) -> Self {
        Self {
            entries: vec![vec![None; q]; q],
        }
    }

    /// Builds a matrix from rows `a[t] = [a[t][t], a[t][t+1], …]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let q = rows.len();
        let mut m = Self::new(q);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != q - t {
                return Err(Error::Config(format!("row {t} must hold {} entries", q - t)));
            }
            for (k, &v) in row.iter().enumerate() {
                m.set(t, t + k, v)?;
            }
        }
        Ok(m)
    }

    pub fn q(&self) -> usize {
        self.entries.len()
    }

    pub fn set(&mut self, task: usize, checkpoint: usize, value: f64) -> Result<()> {
        let q = self.q();
        if task >= q || checkpoint >= q || checkpoint < task {
            return Err(Error::Config(format!("entry ({task}, {checkpoint}) outside the q={q} triangle")));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Config(format!("accuracy {value} outside [0, 1]")));
        }
        self.entries[task][checkpoint] = Some(value);
        Ok(())
    }

    pub fn get(&self, task: usize, checkpoint: usize) -> Option<f64> {
        self.entries.get(task)?.get(checkpoint).copied().flatten()
    }

    fn require(&self, task: usize, checkpoint: usize) -> Result<f64> {
        self.get(task, checkpoint)
            .ok_or_else(|| Error::Config(format!("accuracy entry ({task}, {checkpoint}) missing")))
    }
}

pub fn average_accuracy(matrix: &AccuracyMatrix) -> Result<f64> {
    let q = matrix.q();
    if q == 0 {
        return Err(Error::Config("empty accuracy matrix".into()));
    }
    let mut sum = 0.0;
    for t in 0..q {
        sum += matrix.require(t, q - 1)?;
    }
    Ok(sum / q as f64)
}

pub fn backward_transfer(matrix: &AccuracyMatrix) -> Result<f64> {
    let q = matrix.q();
    if q == 0 {
        return Err(Error::Config("empty accuracy matrix".into()));
    }
    let mut sum = 0.0;
    for t in 0..q {
        sum += matrix.require(t, t)? - matrix.require(t, q - 1)?;
    }
    Ok(sum / q as f64)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax over the first `classes` columns hits the
/// target.
pub fn accuracy_from_scores(scores: &Tensor, targets: &[usize], classes: usize) -> Result<f64> {
    if scores.rows() != targets.len() || targets.is_empty() {
        return Err(Error::shape("accuracy", scores.shape(), &[targets.len()]));
    }
    if classes == 0 || classes > scores.cols() {
        return Err(Error::Config(format!("cannot restrict {} scores to {classes}", scores.cols())));
    }
    let mut correct = 0usize;
    for (i, &y) in targets.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        if argmax(&scores.row(i)[..classes]) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / targets.len() as f64)
}

pub fn samples_to_tensor(samples: &[&Sample]) -> Result<Tensor> {
    let d = samples
        .first()
        .ok_or_else(|| Error::Config("no samples".into()))?
        .features
        .len();
    let data: Vec<f64> = samples.iter().flat_map(|s| s.features.iter().copied()).collect();
    Tensor::new(vec![samples.len(), d], data)
}

/// Accuracy of `model` over all of its classes.
pub fn evaluate_accuracy(model: &Model, samples: &[Sample], labels: &LabelMap) -> Result<f64> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let targets = refs
        .iter()
        .map(|s| {
            labels
                .head_index(s.label)
                .filter(|&i| i < model.num_classes())
                .ok_or(Error::LabelOutOfRange {
                    label: s.label,
                    classes: model.num_classes(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = model.score_matrix(&samples_to_tensor(&refs)?)?;
    accuracy_from_scores(&scores, &targets, model.num_classes())
}
