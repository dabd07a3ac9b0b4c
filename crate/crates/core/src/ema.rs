//! Old/teacher model maintenance.
//!
//! The teacher is a frozen deep copy of the model taken at a task boundary.
//! It only moves through [`ema_update`]; it is never bound to a tape with
//! gradient tracking, so stop-gradient holds structurally.

use crate::error::{Error, Result};
use crate::model::Model;

/// Current model, optional teacher, and the EMA coefficient `γ`.
#[derive(Clone, Debug)]
pub struct ModelPair {
    pub current: Model,
    pub old: Option<Model>,
    pub gamma: f64,
}

impl ModelPair {
    pub fn new(current: Model, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            current,
            old: None,
            gamma,
        })
    }

    pub fn snapshot(&mut self) {
        self.old = Some(snapshot_teacher(&self.current));
    }

    pub fn ema_update(&mut self) -> Result<()> {
        match &mut self.old {
            Some(old) => ema_update(old, &self.current, self.gamma),
            None => Ok(()),
        }
    }

    pub fn discard_teacher(&mut self) {
        self.old = None;
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    Ok(())
}

pub fn snapshot_teacher(current: &Model) -> Model {
    current.frozen()
}

/// `p_old ← γ p_old + (1−γ) p_cur` for the backbone and for every class the
/// teacher knows. Classes added to `current` after the snapshot are not
/// mirrored.
pub fn ema_update(old: &mut Model, current: &Model, gamma: f64) -> Result<()> {
    check_gamma(gamma)?;
    if old.head.kind() != current.head.kind() || old.num_classes() > current.num_classes() {
        return Err(Error::Config(format!(
            "teacher with {} classes cannot track a model with {}",
            old.num_classes(),
            current.num_classes()
        )));
    }
    let cur = current.tensors();
    let mut olds = old.tensors_mut();
    if olds.len() > cur.len() {
        return Err(Error::shape("ema_update", &[olds.len()], &[cur.len()]));
    }
    for (o, c) in olds.iter_mut().zip(&cur) {
        if o.shape() != c.shape() {
            return Err(Error::shape("ema_update", o.shape(), c.shape()));
        }
        for (po, &pc) in o.data_mut().iter_mut().zip(c.data()) {
            let (lo, hi) = if *po <= pc { (*po, pc) } else { (pc, *po) };
            // clamp absorbs rounding so the update stays convex
            *po = (gamma * *po + (1.0 - gamma) * pc).clamp(lo, hi);
        }
    }
    Ok(())
}
