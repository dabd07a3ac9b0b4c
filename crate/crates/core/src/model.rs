use crate::backbone::{BackboneParams, BackboneVars};
use crate::error::{Error, Result};
use crate::head::{Head, HeadVars};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Backbone `θ` plus classifier head `φ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub backbone: BackboneParams,
    pub head: Head,
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub backbone: BackboneVars,
    pub head: HeadVars,
}

impl Model {
    pub fn new(backbone: BackboneParams, head: Head) -> Self {
        Self { backbone, head }
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            backbone: self.backbone.bind(tape),
            head: self.head.bind(tape),
        }
    }

    /// Taped `[B×C]` scores for a `[B×d]` input batch.
    pub fn forward(&self, tape: &mut Tape, vars: &ModelVars, x: Var) -> Result<Var> {
        let h = self.backbone.forward(tape, &vars.backbone, x)?;
        self.head.scores(tape, &vars.head, h)
    }

    /// Untaped scores.
    pub fn score_matrix(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.backbone.features(x)?;
        self.head.score_matrix(&h)
    }

    pub fn store_grads(&mut self, vars: &ModelVars, grads: &Gradients) -> Result<()> {
        self.backbone.store_grads(&vars.backbone, grads)?;
        self.head.store_grads(&vars.head, grads)
    }

    /// Backbone tensors followed by head tensors in class order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.backbone.tensors().collect();
        out.extend(self.head.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.backbone.tensors_mut().collect();
        out.extend(self.head.tensors_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("set_flat_params", &[self.num_params()], &[flat.len()]));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Concatenated gradients, `None` if any tensor lacks one.
    pub fn flat_grads(&self) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.grad()?);
        }
        Some(out)
    }

    pub fn clear_grads(&mut self) {
        self.tensors_mut().into_iter().for_each(Tensor::clear_grad);
    }

    /// Deep copy that never takes part in backward.
    pub fn frozen(&self) -> Self {
        let mut out = self.clone();
        out.tensors_mut().into_iter().for_each(|t| t.set_requires_grad(false));
        out
    }
}
