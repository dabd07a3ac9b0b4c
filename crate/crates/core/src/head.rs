//! Classifier heads behind one interface: the Mahalanobis head and the plain
//! inner-product head `w_cᵀ h` used by the baseline methods.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msl_head::{MslHead, MslVars};
use crate::rng::{rng_for, stream};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Mahalanobis,
    Linear,
}

/// Per-class weight vectors `w_c ∈ R^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    weights: Vec<Tensor>,
    dim: usize,
}

#[derive(Clone, Debug)]
pub struct LinearVars {
    weights: Vec<Var>,
}

impl LinearHead {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("linear head needs n >= 1".into()));
        }
        Ok(Self {
            weights: Vec::new(),
            dim,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn expand(&mut self, k: usize, seed: u64) -> Result<()> {
        if k == 0 {
            return Err(Error::Config("head expansion needs k >= 1".into()));
        }
        let mut rng = rng_for(seed, &[stream::HEAD, self.weights.len() as u64]);
        let bound = 1.0 / (self.dim as f64).sqrt();
        for _ in 0..k {
            let w = (0..self.dim).map(|_| rng.random_range(-bound..bound)).collect();
            self.weights.push(Tensor::vector(w).into_param());
        }
        Ok(())
    }

    fn bind(&self, tape: &mut Tape) -> LinearVars {
        LinearVars {
            weights: self.weights.iter().map(|w| tape.leaf(w)).collect(),
        }
    }

    fn scores(&self, tape: &mut Tape, vars: &LinearVars, h: Var) -> Result<Var> {
        let shape = tape.value(h).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::shape("head_scores", &shape, &[0, self.dim]));
        }
        let batch = shape[0];
        let mut cols = Vec::with_capacity(vars.weights.len());
        for &w in &vars.weights {
            let col = tape.reshape(w, &[self.dim, 1])?;
            let s = tape.matmul(h, col)?;
            cols.push(tape.reshape(s, &[batch])?);
        }
        tape.stack_cols(&cols)
    }

    fn score_matrix(&self, features: &Tensor) -> Result<Tensor> {
        let fs = features.shape();
        if fs.len() != 2 || fs[1] != self.dim {
            return Err(Error::shape("head_scores", fs, &[0, self.dim]));
        }
        let (batch, c) = (fs[0], self.weights.len());
        let mut out = Vec::with_capacity(batch * c);
        for i in 0..batch {
            let h = features.row(i);
            out.extend(self.weights.iter().map(|w| h.iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()));
        }
        Tensor::new(vec![batch, c], out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Mahalanobis(MslHead),
    Linear(LinearHead),
}

#[derive(Clone, Debug)]
pub enum HeadVars {
    Mahalanobis(MslVars),
    Linear(LinearVars),
}

impl Head {
    pub fn new(kind: HeadKind, dim: usize, rank: usize) -> Result<Self> {
        Ok(match kind {
            HeadKind::Mahalanobis => Head::Mahalanobis(MslHead::new(dim, rank)?),
            HeadKind::Linear => Head::Linear(LinearHead::new(dim)?),
        })
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Mahalanobis(_) => HeadKind::Mahalanobis,
            Head::Linear(_) => HeadKind::Linear,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Head::Mahalanobis(h) => h.num_classes(),
            Head::Linear(h) => h.num_classes(),
        }
    }

    /// Adds `k` classes. `biases` only applies to the Mahalanobis head.
    pub fn expand(&mut self, k: usize, seed: u64, biases: Option<&[Vec<f64>]>) -> Result<()> {
        match self {
            Head::Mahalanobis(h) => h.expand(k, seed, biases),
            Head::Linear(h) => h.expand(k, seed),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> HeadVars {
        match self {
            Head::Mahalanobis(h) => HeadVars::Mahalanobis(h.bind(tape)),
            Head::Linear(h) => HeadVars::Linear(h.bind(tape)),
        }
    }

    pub fn scores(&self, tape: &mut Tape, vars: &HeadVars, h: Var) -> Result<Var> {
        match (self, vars) {
            (Head::Mahalanobis(head), HeadVars::Mahalanobis(v)) => head.scores(tape, v, h),
            (Head::Linear(head), HeadVars::Linear(v)) => head.scores(tape, v, h),
            _ => Err(Error::Config("head and bound variables differ in kind".into())),
        }
    }

    pub fn score_matrix(&self, features: &Tensor) -> Result<Tensor> {
        match self {
            Head::Mahalanobis(h) => h.score_matrix(features),
            Head::Linear(h) => h.score_matrix(features),
        }
    }

    pub fn store_grads(&mut self, vars: &HeadVars, grads: &Gradients) -> Result<()> {
        match (self, vars) {
            (Head::Mahalanobis(head), HeadVars::Mahalanobis(v)) => head.store_grads(v, grads),
            (Head::Linear(head), HeadVars::Linear(v)) => {
                for (w, &var) in head.weights.iter_mut().zip(&v.weights) {
                    if let Some(g) = grads.get(var) {
                        w.accumulate_grad(g)?;
                    }
                }
                Ok(())
            }
            _ => Err(Error::Config("head and bound variables differ in kind".into())),
        }
    }

    /// Parameter tensors in class order; for the Mahalanobis head each
    /// class contributes `(L_c, b_c)`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            Head::Mahalanobis(h) => h.tensors().collect(),
            Head::Linear(h) => h.weights.iter().collect(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Head::Mahalanobis(h) => h.tensors_mut().collect(),
            Head::Linear(h) => h.weights.iter_mut().collect(),
        }
    }

    /// Parameter tensors contributed by each class.
    pub fn tensors_per_class(&self) -> usize {
        match self {
            Head::Mahalanobis(_) => 2,
            Head::Linear(_) => 1,
        }
    }
}
