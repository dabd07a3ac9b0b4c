//! Training objective: similarity cross-entropy, temperature distillation
//! against the old model, and their weighted sum.
//!
//! All softmax terms go through max-shifted log-sum-exp; the Mahalanobis
//! scores are unbounded above and overflow a naive `exp` quickly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{log_softmax_in_place, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Distillation weight.
    pub lambda: f64,
    /// Distillation temperature.
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            tau: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Batch-mean of `−log softmax(scores)[label]`.
pub fn ce_loss(tape: &mut Tape, scores: Var, labels: &[usize]) -> Result<Var> {
    let rows = tape.value(scores).rows();
    if labels.len() != rows {
        return Err(Error::shape("ce_loss", tape.value(scores).shape(), &[labels.len()]));
    }
    let logp = tape.log_softmax(scores, 1.0)?;
    let picked = tape.gather(logp, labels)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0 / rows as f64)
}

/// Row-wise `softmax(scores / τ)` without a tape.
pub fn soft_targets(scores: &Tensor, tau: f64) -> Result<Tensor> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    let c = scores.cols();
    let mut data = scores.data().to_vec();
    for row in data.chunks_mut(c) {
        log_softmax_in_place(row, tau);
        row.iter_mut().for_each(|x| *x = x.exp());
    }
    Tensor::new(scores.shape().to_vec(), data)
}

/// Batch-mean of `−Σ_c p_old,c log p_cur,c` with both distributions softened
/// by `τ`. `scores_old` is a plain tensor, so no gradient can reach the old
/// model.
pub fn distillation_loss(tape: &mut Tape, scores_current: Var, scores_old: &Tensor, tau: f64) -> Result<Var> {
    let cur_shape = tape.value(scores_current).shape().to_vec();
    if cur_shape != scores_old.shape() {
        return Err(Error::shape("distillation_loss", &cur_shape, scores_old.shape()));
    }
    let targets = soft_targets(scores_old, tau)?;
    let rows = scores_old.rows();
    let logp = tape.log_softmax(scores_current, tau)?;
    let p = tape.constant(targets);
    let weighted = tape.mul(p, logp)?;
    let total = tape.sum(weighted)?;
    tape.scale(total, -1.0 / rows as f64)
}

/// `ce + λ·dis`; without a distillation term the result is `ce` itself.
pub fn total_loss(tape: &mut Tape, ce: Var, dis: Option<Var>, lambda: f64) -> Result<Var> {
    match dis {
        None => Ok(ce),
        Some(d) => {
            let weighted = tape.scale(d, lambda)?;
            tape.add(ce, weighted)
        }
    }
}

/// Shannon entropy of each row of `softmax(scores / τ)`, averaged.
pub fn mean_entropy(scores: &Tensor, tau: f64) -> Result<f64> {
    let c = scores.cols();
    let mut total = 0.0;
    for row in scores.data().chunks(c) {
        let mut logp = row.to_vec();
        log_softmax_in_place(&mut logp, tau);
        total -= logp.iter().map(|l| l.exp() * l).sum::<f64>();
    }
    Ok(total / scores.rows() as f64)
}
