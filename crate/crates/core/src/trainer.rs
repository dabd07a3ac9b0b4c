//! The continual protocol.
//!
//! Tasks arrive in order. Each task grows the head by its classes, then
//! visits the source domains one after another in a seeded order, training
//! `epochs_per_domain` epochs on batches that mix the domain's current-task
//! samples with every memory exemplar. After the last domain the memory takes
//! its new cells and the model is evaluated.
//!
//! Accuracy bookkeeping: `a[t][j]` is measured after task `j` on test samples
//! whose labels belong to tasks `0..=t`, with the argmax restricted to those
//! classes. The pooled source-domain matrix feeds `A` and `BW`; every test
//! domain, the unseen one included, also gets its own matrix.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backbone::{backbone_init, Activation, BackboneConfig};
use crate::ema::ModelPair;
use crate::error::{Error, Result};
use crate::head::{Head, HeadKind};
use crate::losses::{ce_loss, distillation_loss, total_loss};
use crate::metrics::{argmax, average_accuracy, backward_transfer, samples_to_tensor, AccuracyMatrix};
use crate::model::Model;
use crate::msl_head::default_rank;
use crate::rng::{derive_seed, rng_for, stream};
use crate::stream::{batches, Batch, DomainDataset, LabelMap, MemoryMode, RehearsalMemory, Sample, TaskStream};
use crate::tape::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Mahalanobis head, memory, distillation against the EMA teacher.
    MslMov,
    /// Mahalanobis head and memory.
    Msl,
    /// Inner-product head and memory.
    Erm,
    /// Inner-product head, no memory.
    FinetuneNoMemory,
    /// Inner-product head, memory, distillation against the EMA teacher.
    LinearHead,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::MslMov,
        Method::Msl,
        Method::Erm,
        Method::FinetuneNoMemory,
        Method::LinearHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::MslMov => "msl_mov",
            Method::Msl => "msl",
            Method::Erm => "erm",
            Method::FinetuneNoMemory => "finetune_no_memory",
            Method::LinearHead => "linear_head",
        }
    }

    pub fn head(self) -> HeadKind {
        match self {
            Method::MslMov | Method::Msl => HeadKind::Mahalanobis,
            _ => HeadKind::Linear,
        }
    }

    pub fn distill(self) -> bool {
        matches!(self, Method::MslMov | Method::LinearHead)
    }

    pub fn uses_memory(self) -> bool {
        self != Method::FinetuneNoMemory
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown method `{s}`; valid methods: {}", valid.join(", ")))
        })
    }
}

/// How a new Mahalanobis class's bias `b_c` starts out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasInit {
    #[default]
    Zero,
    /// Mean backbone feature of the class's training samples at expansion time.
    ClassMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs_per_domain: usize,
    pub batch_size: usize,
    /// Zero freezes the model, which is useful as a control.
    pub learning_rate: f64,
    pub lambda: f64,
    pub tau: f64,
    pub gamma: f64,
    pub seed: u64,
    pub repetitions: usize,
    /// Exemplars per memory cell.
    pub memory_capacity: usize,
    pub memory_mode: MemoryMode,
    pub head: HeadKind,
    pub distill: bool,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    /// Metric rank; defaults to `min(64, feature_dim)`.
    pub rank: Option<usize>,
    pub activation: Activation,
    pub bias_init: BiasInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_per_domain: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            lambda: 1e-3,
            tau: 2.0,
            gamma: 0.96,
            seed: 0,
            repetitions: 5,
            memory_capacity: 5,
            memory_mode: MemoryMode::PerDomain,
            head: HeadKind::Mahalanobis,
            distill: true,
            hidden_dims: vec![64],
            feature_dim: 32,
            rank: None,
            activation: Activation::Relu,
            bias_init: BiasInit::Zero,
        }
    }
}

impl TrainConfig {
    /// Default hyperparameters with `method`'s head, memory and
    /// distillation switches.
    pub fn for_method(method: Method) -> Self {
        let mut cfg = Self::default();
        cfg.apply_method(method);
        cfg
    }

    pub fn apply_method(&mut self, method: Method) {
        self.head = method.head();
        self.distill = method.distill();
        if !method.uses_memory() {
            self.memory_capacity = 0;
        }
    }

    pub fn rank(&self) -> usize {
        self.rank.unwrap_or_else(|| default_rank(self.feature_dim))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs_per_domain == 0 {
            return fail("epochs_per_domain must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return fail(format!("tau must be > 0, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.repetitions == 0 {
            return fail("repetitions must be >= 1".into());
        }
        if self.feature_dim == 0 || self.hidden_dims.contains(&0) {
            return fail("layer widths must be >= 1".into());
        }
        let r = self.rank();
        if r == 0 || r > self.feature_dim {
            return fail(format!("rank must lie in [1, {}], got {r}", self.feature_dim));
        }
        Ok(())
    }

    pub fn backbone(&self, input_dim: usize) -> BackboneConfig {
        BackboneConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            feature_dim: self.feature_dim,
            activation: self.activation,
            seed: self.seed,
        }
    }

    /// Fresh model with an empty head.
    pub fn init_model(&self, input_dim: usize) -> Result<Model> {
        let backbone = backbone_init(&self.backbone(input_dim))?;
        let head = Head::new(self.head, self.feature_dim, self.rank())?;
        Ok(Model::new(backbone, head))
    }
}

/// Sees everything handed to the learner. Used for audits.
pub trait StreamObserver {
    fn on_batch(&mut self, _samples: &[&Sample]) {}
    fn on_memory(&mut self, _memory: &RehearsalMemory) {}
}

pub struct NoopObserver;

impl StreamObserver for NoopObserver {}

/// `p ← p − lr·grad` over every trainable tensor, then clears the grads.
pub fn sgd_step(model: &mut Model, learning_rate: f64) -> Result<()> {
    for (i, t) in model.tensors().iter().enumerate() {
        if t.requires_grad() && t.grad().is_none() {
            return Err(Error::MissingGrad(format!("parameter tensor {i}")));
        }
    }
    for t in model.tensors_mut() {
        if !t.requires_grad() {
            continue;
        }
        let grad = t.grad().map(<[f64]>::to_vec).unwrap_or_default();
        for (p, g) in t.data_mut().iter_mut().zip(grad) {
            *p -= learning_rate * g;
        }
        t.clear_grad();
        if !t.is_finite() {
            return Err(Error::NonFinite("parameter after sgd step".into()));
        }
    }
    Ok(())
}

/// Step hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub learning_rate: f64,
    pub lambda: f64,
    pub tau: f64,
}

impl From<&TrainConfig> for StepConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            lambda: c.lambda,
            tau: c.tau,
        }
    }
}

/// One optimization step; returns the loss before the update.
///
/// With a teacher present the current scores of the teacher's classes are
/// distilled towards the teacher's softened scores, which enter the tape as
/// constants.
pub fn train_step(pair: &mut ModelPair, batch: &Batch, cfg: StepConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut tape = Tape::new();
    let vars = pair.current.bind(&mut tape);
    let x = tape.constant(batch.features.clone());
    let scores = pair.current.forward(&mut tape, &vars, x)?;
    let ce = ce_loss(&mut tape, scores, &batch.labels)?;
    let dis = match &pair.old {
        Some(old) => {
            let target = old.score_matrix(&batch.features)?;
            let current = tape.slice_cols(scores, 0, old.num_classes())?;
            Some(distillation_loss(&mut tape, current, &target, cfg.tau)?)
        }
        None => None,
    };
    let loss = total_loss(&mut tape, ce, dis, cfg.lambda)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    pair.current.store_grads(&vars, &grads)?;
    sgd_step(&mut pair.current, cfg.learning_rate)?;
    pair.ema_update()?;
    Ok(value)
}

/// Mutable state of one repetition.
#[derive(Clone, Debug)]
pub struct ExperimentState {
    pub config: TrainConfig,
    pub repetition: usize,
    pub pair: ModelPair,
    pub memory: RehearsalMemory,
    pub labels: LabelMap,
    /// Pooled source-domain test accuracy.
    pub seen: AccuracyMatrix,
    /// One matrix per test group of the dataset, unseen domain last.
    pub per_domain: Vec<AccuracyMatrix>,
    /// Source domain ids in visiting order, per task.
    pub domain_orders: Vec<Vec<usize>>,
    /// Mean training loss per task.
    pub task_losses: Vec<f64>,
    next_task: usize,
}

impl ExperimentState {
    pub fn new(config: &TrainConfig, data: &DomainDataset, tasks: &TaskStream, repetition: usize) -> Result<Self> {
        config.validate()?;
        let q = tasks.len();
        let capacity = match config.memory_mode {
            MemoryMode::PerDomain => config.memory_capacity,
            MemoryMode::ClassBalanced => config.memory_capacity * data.num_sources(),
        };
        Ok(Self {
            config: config.clone(),
            repetition,
            pair: ModelPair::new(config.init_model(data.dim)?, config.gamma)?,
            memory: RehearsalMemory::new(capacity, config.memory_mode, config.seed),
            labels: LabelMap::default(),
            seen: AccuracyMatrix::new(q),
            per_domain: vec![AccuracyMatrix::new(q); data.test.len()],
            domain_orders: Vec::new(),
            task_losses: Vec::new(),
            next_task: 0,
        })
    }

    pub fn next_task(&self) -> usize {
        self.next_task
    }

    /// Runs task `t`, which must be the next one.
    pub fn run_task(
        &mut self,
        t: usize,
        tasks: &TaskStream,
        data: &DomainDataset,
        observer: &mut dyn StreamObserver,
    ) -> Result<()> {
        if t != self.next_task || t >= tasks.len() {
            return Err(Error::Protocol(format!(
                "task {t} requested but task {} is next of {}",
                self.next_task,
                tasks.len()
            )));
        }
        let cfg = self.config.clone();
        let classes = &tasks.tasks[t];
        if cfg.distill && t > 0 {
            self.pair.snapshot();
        }
        let task_train: Vec<Vec<Sample>> = data
            .train
            .iter()
            .map(|dom| dom.iter().filter(|s| classes.contains(&s.label)).cloned().collect())
            .collect();

        let biases = match (cfg.bias_init, cfg.head) {
            (BiasInit::ClassMean, HeadKind::Mahalanobis) => Some(self.class_means(classes, &task_train)?),
            _ => None,
        };
        self.labels.extend(classes)?;
        self.pair.current.head.expand(classes.len(), cfg.seed, biases.as_deref())?;

        let mut order: Vec<usize> = (0..data.num_sources()).collect();
        order.shuffle(&mut rng_for(
            cfg.seed,
            &[stream::DOMAIN_ORDER, self.repetition as u64, t as u64],
        ));
        let step = StepConfig::from(&cfg);
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for (pos, &src) in order.iter().enumerate() {
            let seed = derive_seed(cfg.seed, &[self.repetition as u64, t as u64, pos as u64]);
            for epoch in 0..cfg.epochs_per_domain {
                for chunk in batches(&task_train[src], &self.memory, cfg.batch_size, seed, epoch)? {
                    observer.on_batch(&chunk);
                    let batch = Batch::from_samples(&chunk, &self.labels)?;
                    loss_sum += train_step(&mut self.pair, &batch, step)?;
                    steps += 1;
                }
            }
        }
        self.memory.update(&task_train.concat());
        observer.on_memory(&self.memory);
        self.pair.discard_teacher();

        self.domain_orders.push(order.iter().map(|&i| data.source_domains[i]).collect());
        self.task_losses.push(loss_sum / steps.max(1) as f64);
        self.evaluate(t, tasks, data)?;
        self.next_task += 1;
        Ok(())
    }

    fn class_means(&self, classes: &[usize], task_train: &[Vec<Sample>]) -> Result<Vec<Vec<f64>>> {
        classes
            .iter()
            .map(|&c| {
                let members: Vec<&Sample> = task_train.iter().flatten().filter(|s| s.label == c).collect();
                let h = self.pair.current.backbone.features(&samples_to_tensor(&members)?)?;
                let mut mean = vec![0.0; h.cols()];
                for i in 0..h.rows() {
                    mean.iter_mut().zip(h.row(i)).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= h.rows() as f64);
                Ok(mean)
            })
            .collect()
    }

    /// Fills column `j` of every matrix.
    fn evaluate(&mut self, j: usize, tasks: &TaskStream, data: &DomainDataset) -> Result<()> {
        // cumulative class count after each task
        let cum: Vec<usize> = tasks
            .tasks
            .iter()
            .scan(0, |acc, c| {
                *acc += c.len();
                Some(*acc)
            })
            .collect();
        let mut pooled = vec![(0usize, 0usize); j + 1];
        for (g, group) in data.test.iter().enumerate() {
            let counts = self.count_correct(group, j, &cum)?;
            for t in 0..=j {
                let (hit, total) = counts[t];
                if total == 0 {
                    return Err(Error::Validation(format!(
                        "domain {} has no test samples for tasks 0..={t}",
                        data.test_domain_id(g)
                    )));
                }
                self.per_domain[g].set(t, j, hit as f64 / total as f64)?;
                if g < data.num_sources() {
                    pooled[t].0 += hit;
                    pooled[t].1 += total;
                }
            }
        }
        for (t, &(hit, total)) in pooled.iter().enumerate() {
            self.seen.set(t, j, hit as f64 / total as f64)?;
        }
        Ok(())
    }

    /// `(correct, total)` for every `t ≤ j` on one test group.
    fn count_correct(&self, group: &[Sample], j: usize, cum: &[usize]) -> Result<Vec<(usize, usize)>> {
        let seen: Vec<&Sample> = group
            .iter()
            .filter(|s| self.labels.head_index(s.label).is_some())
            .collect();
        let mut counts = vec![(0, 0); j + 1];
        if seen.is_empty() {
            return Ok(counts);
        }
        let scores = self.pair.current.score_matrix(&samples_to_tensor(&seen)?)?;
        for (i, s) in seen.iter().enumerate() {
            let y = self.labels.head_index(s.label).unwrap();
            let row = scores.row(i);
            for (t, count) in counts.iter_mut().enumerate() {
                if y < cum[t] {
                    count.1 += 1;
                    if argmax(&row[..cum[t]]) == y {
                        count.0 += 1;
                    }
                }
            }
        }
        Ok(counts)
    }
}

/// Final-model accuracy on one test domain over all classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainAccuracy {
    pub domain: usize,
    pub unseen: bool,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainMatrix {
    pub domain: usize,
    pub unseen: bool,
    pub matrix: AccuracyMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub repetition: usize,
    pub domain_orders: Vec<Vec<usize>>,
    pub task_losses: Vec<f64>,
    pub seen: AccuracyMatrix,
    pub per_domain: Vec<DomainMatrix>,
    pub average_accuracy: f64,
    pub backward_transfer: f64,
    pub unseen_accuracy: f64,
}

impl RepetitionReport {
    fn from_state(state: &ExperimentState, data: &DomainDataset) -> Result<Self> {
        let q = state.seen.q();
        let per_domain: Vec<DomainMatrix> = state
            .per_domain
            .iter()
            .enumerate()
            .map(|(g, m)| DomainMatrix {
                domain: data.test_domain_id(g),
                unseen: g == data.num_sources(),
                matrix: m.clone(),
            })
            .collect();
        let unseen_accuracy = final_accuracy(&per_domain.last().expect("unseen domain present").matrix, q)?;
        Ok(Self {
            repetition: state.repetition,
            domain_orders: state.domain_orders.clone(),
            task_losses: state.task_losses.clone(),
            average_accuracy: average_accuracy(&state.seen)?,
            backward_transfer: backward_transfer(&state.seen)?,
            seen: state.seen.clone(),
            per_domain,
            unseen_accuracy,
        })
    }
}

fn final_accuracy(m: &AccuracyMatrix, q: usize) -> Result<f64> {
    m.get(q - 1, q - 1)
        .ok_or_else(|| Error::Protocol("final accuracy missing".into()))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: TrainConfig,
    pub tasks: Vec<Vec<usize>>,
    pub source_domains: Vec<usize>,
    pub unseen_domain: usize,
    pub repetitions: Vec<RepetitionReport>,
    /// Entrywise mean of the per-repetition pooled matrices.
    pub mean_seen: AccuracyMatrix,
    /// Means of the per-repetition values.
    pub average_accuracy: f64,
    pub backward_transfer: f64,
    pub unseen_accuracy: f64,
    pub per_domain_accuracy: Vec<DomainAccuracy>,
}

impl ExperimentReport {
    fn assemble(config: &TrainConfig, tasks: &TaskStream, data: &DomainDataset, reps: Vec<RepetitionReport>) -> Result<Self> {
        let q = tasks.len();
        let mut mean_seen = AccuracyMatrix::new(q);
        for t in 0..q {
            for j in t..q {
                let vals: Option<Vec<f64>> = reps.iter().map(|r| r.seen.get(t, j)).collect();
                let vals = vals.ok_or_else(|| Error::Protocol(format!("entry ({t}, {j}) missing")))?;
                mean_seen.set(t, j, mean(vals.into_iter()).clamp(0.0, 1.0))?;
            }
        }
        let per_domain_accuracy = (0..data.test.len())
            .map(|g| {
                let accs = reps
                    .iter()
                    .map(|r| final_accuracy(&r.per_domain[g].matrix, q))
                    .collect::<Result<Vec<_>>>()?;
                Ok(DomainAccuracy {
                    domain: data.test_domain_id(g),
                    unseen: g == data.num_sources(),
                    accuracy: mean(accs.into_iter()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            tasks: tasks.tasks.clone(),
            source_domains: data.source_domains.clone(),
            unseen_domain: data.unseen_domain,
            average_accuracy: mean(reps.iter().map(|r| r.average_accuracy)),
            backward_transfer: mean(reps.iter().map(|r| r.backward_transfer)),
            unseen_accuracy: mean(reps.iter().map(|r| r.unseen_accuracy)),
            repetitions: reps,
            mean_seen,
            per_domain_accuracy,
        })
    }

    /// Recomputes every derived number from the stored matrices and checks
    /// that it matches the stored value bit for bit.
    pub fn verify(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::Validation(format!("report inconsistent: {what}")));
        let q = self.tasks.len();
        for r in &self.repetitions {
            if average_accuracy(&r.seen)?.to_bits() != r.average_accuracy.to_bits() {
                return fail("repetition A");
            }
            if backward_transfer(&r.seen)?.to_bits() != r.backward_transfer.to_bits() {
                return fail("repetition BW");
            }
            let unseen = r.per_domain.last().map(|d| final_accuracy(&d.matrix, q));
            if !matches!(unseen, Some(Ok(v)) if v.to_bits() == r.unseen_accuracy.to_bits()) {
                return fail("repetition unseen accuracy");
            }
        }
        let reps = &self.repetitions;
        if mean(reps.iter().map(|r| r.average_accuracy)).to_bits() != self.average_accuracy.to_bits() {
            return fail("mean A");
        }
        if mean(reps.iter().map(|r| r.backward_transfer)).to_bits() != self.backward_transfer.to_bits() {
            return fail("mean BW");
        }
        if mean(reps.iter().map(|r| r.unseen_accuracy)).to_bits() != self.unseen_accuracy.to_bits() {
            return fail("mean unseen accuracy");
        }
        Ok(())
    }
}

/// One repetition over every task, leaving the final state for inspection.
pub fn run_repetition(
    data: &DomainDataset,
    tasks: &TaskStream,
    config: &TrainConfig,
    repetition: usize,
    observer: &mut dyn StreamObserver,
) -> Result<ExperimentState> {
    let mut state = ExperimentState::new(config, data, tasks, repetition)?;
    for t in 0..tasks.len() {
        state.run_task(t, tasks, data, observer)?;
    }
    Ok(state)
}

pub fn run_experiment(data: &DomainDataset, tasks: &TaskStream, config: &TrainConfig) -> Result<ExperimentReport> {
    run_experiment_with_observer(data, tasks, config, &mut NoopObserver)
}

pub fn run_experiment_with_observer(
    data: &DomainDataset,
    tasks: &TaskStream,
    config: &TrainConfig,
    observer: &mut dyn StreamObserver,
) -> Result<ExperimentReport> {
    run_experiment_with_models(data, tasks, config, observer).map(|(report, _)| report)
}

/// Like [`run_experiment_with_observer`], also returning the final model of
/// every repetition.
pub fn run_experiment_with_models(
    data: &DomainDataset,
    tasks: &TaskStream,
    config: &TrainConfig,
    observer: &mut dyn StreamObserver,
) -> Result<(ExperimentReport, Vec<Model>)> {
    config.validate()?;
    check_tasks(tasks, data.num_classes)?;
    let mut reps = Vec::with_capacity(config.repetitions);
    let mut models = Vec::with_capacity(config.repetitions);
    for rep in 0..config.repetitions {
        let state = run_repetition(data, tasks, config, rep, observer)?;
        reps.push(RepetitionReport::from_state(&state, data)?);
        models.push(state.pair.current);
    }
    Ok((ExperimentReport::assemble(config, tasks, data, reps)?, models))
}

fn check_tasks(tasks: &TaskStream, num_classes: usize) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::Config("task stream is empty".into()));
    }
    let mut seen = vec![false; num_classes];
    for (t, classes) in tasks.tasks.iter().enumerate() {
        if classes.is_empty() {
            return Err(Error::Config(format!("task {t} has no classes")));
        }
        for &c in classes {
            if c >= num_classes {
                return Err(Error::LabelOutOfRange { label: c, classes: num_classes });
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::Config(format!("class {c} appears in more than one task")));
            }
        }
    }
    Ok(())
}
