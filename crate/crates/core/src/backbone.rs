//! Feature extractor: a multilayer perceptron `d → hidden… → n`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl BackboneConfig {
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden_dims);
        dims.push(self.feature_dim);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::Config(format!("backbone dimensions must be >= 1, got {:?}", self.dims())));
        }
        Ok(())
    }
}

/// One affine layer `x W + b` with `W: [in×out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    pub activation: Activation,
    pub layers: Vec<Linear>,
}

/// Tape handles for one bound copy of the backbone.
#[derive(Clone, Debug)]
pub struct BackboneVars {
    layers: Vec<(Var, Var)>,
}

/// Uniform `(−1/√fan_in, 1/√fan_in)` weights, zero biases.
pub fn backbone_init(config: &BackboneConfig) -> Result<BackboneParams> {
    config.validate()?;
    let mut rng = rng_for(config.seed, &[stream::BACKBONE]);
    let dims = config.dims();
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Linear {
                weight: Tensor::new(vec![fan_in, fan_out], data)
                    .expect("dims checked")
                    .into_param(),
                bias: Tensor::zeros(&[fan_out]).into_param(),
            }
        })
        .collect();
    Ok(BackboneParams {
        activation: config.activation,
        layers,
    })
}

impl BackboneParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> BackboneVars {
        BackboneVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(&l.weight), tape.leaf(&l.bias)))
                .collect(),
        }
    }

    /// `h = σ(…σ(x W₁ + b₁)…) W_L + b_L`; no activation after the last layer.
    pub fn forward(&self, tape: &mut Tape, vars: &BackboneVars, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::shape("backbone_forward", &shape, &[0, self.input_dim()]));
        }
        let batch = shape[0];
        let mut h = x;
        let last = vars.layers.len() - 1;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            let bias = tape.repeat_rows(b, batch)?;
            h = tape.add(z, bias)?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => tape.relu(h)?,
                    Activation::Tanh => tape.tanh(h)?,
                };
            }
        }
        Ok(h)
    }

    /// Untaped forward for evaluation.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let frozen = self.frozen();
        let vars = frozen.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let h = frozen.forward(&mut tape, &vars, xv)?;
        Ok(tape.value(h).clone())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn store_grads(&mut self, vars: &BackboneVars, grads: &crate::tape::Gradients) -> Result<()> {
        for (layer, &(w, b)) in self.layers.iter_mut().zip(&vars.layers) {
            if let Some(g) = grads.get(w) {
                layer.weight.accumulate_grad(g)?;
            }
            if let Some(g) = grads.get(b) {
                layer.bias.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Copy with every tensor detached from gradient tracking.
    pub fn frozen(&self) -> Self {
        let mut out = self.clone();
        out.tensors_mut().for_each(|t| t.set_requires_grad(false));
        out
    }
}
