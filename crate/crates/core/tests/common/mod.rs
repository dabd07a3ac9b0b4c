#![allow(dead_code)]

use msl_core::backbone::{backbone_init, Activation, BackboneConfig};
use msl_core::head::{Head, HeadKind};
use msl_core::losses::{ce_loss, distillation_loss, total_loss};
use msl_core::model::Model;
use msl_core::rng::Rng;
use msl_core::tape::{finite_difference_grad, max_relative_error, Tape};
use msl_core::tensor::Tensor;
use msl_core::model::ModelVars;
use msl_core::{Result, Var};
use rand::{Rng as _, SeedableRng};

/// Denominator floor for relative gradient errors, per unit of loss. Central
/// differences at `ε = 1e-5` carry about `|f|·2⁻⁵²/ε ≈ 2e-11·|f|` of rounding
/// noise, so gradients below `1e-6·max(1, |f|)` are compared in absolute
/// terms.
pub const GRAD_FLOOR: f64 = 1e-6;
pub const FD_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

pub fn random_tensor(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(rng, n, bound)).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Ce,
    Dis,
    Total,
}

/// A small model, a batch and fixed teacher scores.
#[derive(Clone, Debug)]
pub struct Instance {
    pub model: Model,
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub old_scores: Tensor,
    pub lambda: f64,
    pub tau: f64,
}

fn hidden_preactivations_clear(model: &Model, x: &Tensor, margin: f64) -> bool {
    let layers = &model.backbone.layers;
    let mut h: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
    for layer in &layers[..layers.len() - 1] {
        let fan_in = layer.weight.rows();
        let mut next = Vec::with_capacity(h.len());
        for row in &h {
            let mut z = layer.bias.data().to_vec();
            for (k, zk) in z.iter_mut().enumerate() {
                *zk += (0..fan_in).map(|i| row[i] * layer.weight.at(i, k)).sum::<f64>();
            }
            if z.iter().any(|v| v.abs() < margin) {
                return false;
            }
            next.push(z.into_iter().map(|v| v.max(0.0)).collect::<Vec<_>>());
        }
        h = next;
    }
    true
}

/// Random instance with `n ≤ 8`, `r ≤ 4`, `C ≤ 5`, `B ≤ 4`; parameters in
/// `[−1, 1]`, inputs in `[−2, 2]`. ReLU draws are rejected when a hidden
/// pre-activation sits within `1e-3` of the kink.
pub fn random_instance(rng: &mut Rng, kind: HeadKind, activation: Activation) -> Instance {
    loop {
        let n = rng.random_range(1..=8);
        let r = rng.random_range(1..=n.min(4));
        let c = rng.random_range(1..=5);
        let c_old = rng.random_range(1..=c);
        let b = rng.random_range(1..=4);
        let d = rng.random_range(1..=4);
        let hidden = if rng.random_bool(0.5) {
            vec![]
        } else {
            vec![rng.random_range(1..=5)]
        };
        let backbone = backbone_init(&BackboneConfig {
            input_dim: d,
            hidden_dims: hidden,
            feature_dim: n,
            activation,
            seed: rng.random(),
        })
        .unwrap();
        let mut head = Head::new(kind, n, r).unwrap();
        head.expand(c, rng.random(), None).unwrap();
        let mut model = Model::new(backbone, head);
        let p = uniform(rng, model.num_params(), 1.0);
        model.set_flat_params(&p).unwrap();
        let x = random_tensor(rng, &[b, d], 2.0);
        if activation == Activation::Relu && !hidden_preactivations_clear(&model, &x, 1e-3) {
            continue;
        }
        let labels = (0..b).map(|_| rng.random_range(0..c)).collect();
        let old_scores = random_tensor(rng, &[b, c_old], 3.0);
        return Instance {
            model,
            x,
            labels,
            old_scores,
            lambda: rng.random_range(0.0..=1.0),
            tau: [1.0, 2.0, 5.0][rng.random_range(0..3)],
        };
    }
}

fn build(tape: &mut Tape, model: &Model, inst: &Instance, obj: Objective) -> Result<(Var, ModelVars)> {
    let vars = model.bind(tape);
    let x = tape.constant(inst.x.clone());
    let scores = model.forward(tape, &vars, x)?;
    let c_old = inst.old_scores.cols();
    let dis = |tape: &mut Tape| -> Result<Var> {
        let cur = tape.slice_cols(scores, 0, c_old)?;
        distillation_loss(tape, cur, &inst.old_scores, inst.tau)
    };
    let loss = match obj {
        Objective::Ce => ce_loss(tape, scores, &inst.labels)?,
        Objective::Dis => dis(tape)?,
        Objective::Total => {
            let ce = ce_loss(tape, scores, &inst.labels)?;
            let d = dis(tape)?;
            total_loss(tape, ce, Some(d), inst.lambda)?
        }
    };
    Ok((loss, vars))
}

pub fn objective_value(model: &Model, inst: &Instance, obj: Objective) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = build(&mut tape, model, inst, obj)?;
    Ok(tape.value(loss).item())
}

/// Reverse-mode gradient over every backbone and head parameter.
pub fn analytic_grad(inst: &Instance, obj: Objective) -> Vec<f64> {
    let mut model = inst.model.clone();
    let mut tape = Tape::new();
    let (loss, vars) = build(&mut tape, &model, inst, obj).unwrap();
    let grads = tape.backward(loss).unwrap();
    model.store_grads(&vars, &grads).unwrap();
    model.flat_grads().expect("all parameters receive a gradient")
}

/// Central differences over the flattened parameter vector.
pub fn numeric_grad(inst: &Instance, obj: Objective) -> Vec<f64> {
    let flat = Tensor::vector(inst.model.flat_params());
    let mut probe = inst.model.clone();
    finite_difference_grad(
        |p| {
            probe.set_flat_params(p.data())?;
            objective_value(&probe, inst, obj)
        },
        &flat,
        FD_EPS,
    )
    .unwrap()
    .data()
    .to_vec()
}

pub fn grad_error(inst: &Instance, obj: Objective) -> f64 {
    let scale = objective_value(&inst.model, inst, obj).unwrap().abs().max(1.0);
    max_relative_error(&analytic_grad(inst, obj), &numeric_grad(inst, obj), GRAD_FLOOR * scale)
}
