//! End-to-end protocol behaviour on small synthetic streams.

use std::collections::BTreeSet;

use msl_core::backbone::{backbone_init, Activation, BackboneConfig, BackboneParams, Linear};
use msl_core::ema::ModelPair;
use msl_core::head::{Head, HeadKind};
use msl_core::losses::ce_loss;
use msl_core::metrics::{accuracy_from_scores, samples_to_tensor};
use msl_core::model::Model;
use msl_core::stream::{
    generate_synthetic, load_features_table, split_tasks, write_features_table, Batch, DomainDataset, LabelMap,
    RehearsalMemory, Sample, SyntheticConfig, TaskStream,
};
use msl_core::tape::Tape;
use msl_core::tensor::Tensor;
use msl_core::trainer::{
    run_experiment, run_experiment_with_observer, run_repetition, sgd_step, train_step, ExperimentState, Method,
    NoopObserver, StepConfig, StreamObserver, TrainConfig,
};

fn data(seed: u64, classes: usize, q: usize) -> (DomainDataset, TaskStream) {
    let pool = generate_synthetic(&SyntheticConfig {
        num_classes: classes,
        m_domains: 4,
        d: 8,
        per_cell_count: 12,
        seed,
        ..Default::default()
    })
    .unwrap();
    (pool.leave_one_out(1).unwrap(), split_tasks(classes, q, seed).unwrap())
}

fn config(method: Method) -> TrainConfig {
    TrainConfig {
        epochs_per_domain: 2,
        batch_size: 8,
        learning_rate: 0.05,
        repetitions: 2,
        hidden_dims: vec![8],
        feature_dim: 4,
        seed: 3,
        ..TrainConfig::for_method(method)
    }
}

#[derive(Default)]
struct Recorder {
    batch_domains: BTreeSet<usize>,
    memory_domains: BTreeSet<usize>,
    batches: usize,
    memories: Vec<RehearsalMemory>,
}

impl StreamObserver for Recorder {
    fn on_batch(&mut self, samples: &[&Sample]) {
        self.batches += 1;
        self.batch_domains.extend(samples.iter().map(|s| s.domain));
    }

    fn on_memory(&mut self, memory: &RehearsalMemory) {
        self.memory_domains.extend(memory.samples().map(|s| s.domain));
        self.memories.push(memory.clone());
    }
}

#[test]
fn unseen_domain_never_reaches_the_learner() {
    let (data, tasks) = data(0, 10, 5);
    let mut rec = Recorder::default();
    run_experiment_with_observer(&data, &tasks, &config(Method::MslMov), &mut rec).unwrap();
    assert!(rec.batches > 0);
    assert!(!rec.batch_domains.contains(&data.unseen_domain));
    assert!(!rec.memory_domains.contains(&data.unseen_domain));
    assert_eq!(rec.batch_domains, data.source_domains.iter().copied().collect());
}

#[test]
fn batches_carry_no_domain_information() {
    let mut labels = LabelMap::default();
    labels.extend(&[0, 1]).unwrap();
    let a = Sample { features: vec![0.5, 1.0], label: 1, domain: 0 };
    let b = Sample { domain: 7, ..a.clone() };
    assert_eq!(
        Batch::from_samples(&[&a], &labels).unwrap(),
        Batch::from_samples(&[&b], &labels).unwrap()
    );
}

#[test]
fn memory_is_shared_across_methods_and_sized_by_cells() {
    let (data, tasks) = data(1, 6, 3);
    let mut runs = Vec::new();
    for m in [Method::MslMov, Method::Erm, Method::Msl] {
        let mut rec = Recorder::default();
        run_experiment_with_observer(&data, &tasks, &config(m), &mut rec).unwrap();
        runs.push(rec.memories);
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
    // after task t the memory holds min(capacity, cell size) per seen cell
    let capacity = config(Method::Erm).memory_capacity;
    for (t, mem) in runs[0].iter().take(tasks.len()).enumerate() {
        let seen: Vec<usize> = tasks.tasks[..=t].concat();
        let expected: usize = data
            .train
            .iter()
            .flat_map(|dom| seen.iter().map(move |c| dom.iter().filter(|s| s.label == *c).count()))
            .map(|n| n.min(capacity))
            .sum();
        assert_eq!(mem.len(), expected);
    }
}

#[test]
fn head_expansion_leaves_old_scores_bit_identical() {
    for kind in [HeadKind::Mahalanobis, HeadKind::Linear] {
        let mut head = Head::new(kind, 5, 3).unwrap();
        head.expand(3, 9, None).unwrap();
        let h = Tensor::new(vec![4, 5], (0..20).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let before = head.score_matrix(&h).unwrap();
        head.expand(4, 9, None).unwrap();
        let after = head.score_matrix(&h).unwrap();
        assert_eq!(after.cols(), 7);
        for i in 0..4 {
            let old: Vec<u64> = before.row(i).iter().map(|v| v.to_bits()).collect();
            let new: Vec<u64> = after.row(i)[..3].iter().map(|v| v.to_bits()).collect();
            assert_eq!(old, new);
        }
    }
}

#[test]
fn frozen_model_has_zero_backward_transfer() {
    let (data, tasks) = data(2, 10, 5);
    for m in [Method::MslMov, Method::Erm] {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..config(m)
        };
        let report = run_experiment(&data, &tasks, &cfg).unwrap();
        for rep in &report.repetitions {
            assert_eq!(rep.backward_transfer, 0.0);
            for t in 0..tasks.len() {
                for j in t..tasks.len() {
                    assert_eq!(rep.seen.get(t, j), rep.seen.get(t, t));
                }
            }
        }
        assert_eq!(report.backward_transfer, 0.0);
    }
}

#[test]
fn zero_lambda_frozen_teacher_matches_plain_training_stepwise() {
    let (data, tasks) = data(3, 4, 2);
    let cfg = config(Method::MslMov);
    let mut state = ExperimentState::new(&cfg, &data, &tasks, 0).unwrap();
    state.run_task(0, &tasks, &data, &mut NoopObserver).unwrap();
    let mut with_teacher = ModelPair::new(state.pair.current.clone(), 1.0).unwrap();
    with_teacher.snapshot();
    let mut plain = ModelPair::new(state.pair.current.clone(), 1.0).unwrap();
    let mut labels = state.labels.clone();
    labels.extend(&tasks.tasks[1]).unwrap();
    for pair in [&mut with_teacher, &mut plain] {
        pair.current.head.expand(tasks.tasks[1].len(), cfg.seed, None).unwrap();
    }
    let pool: Vec<&Sample> = data.train.iter().flatten().collect();
    let step = StepConfig { learning_rate: 0.05, lambda: 0.0, tau: 2.0 };
    for k in 0..10 {
        let chunk: Vec<&Sample> = pool.iter().cycle().skip(k * 5).take(5).copied().collect();
        let batch = Batch::from_samples(&chunk, &labels).unwrap();
        let a = train_step(&mut with_teacher, &batch, step).unwrap();
        let b = train_step(&mut plain, &batch, step).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let pa: Vec<u64> = with_teacher.current.flat_params().iter().map(|v| v.to_bits()).collect();
        let pb: Vec<u64> = plain.current.flat_params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(pa, pb, "diverged at step {k}");
    }
}

#[test]
fn baseline_degeneracies() {
    let (data, tasks) = data(4, 6, 3);
    let zero_lambda = TrainConfig {
        lambda: 0.0,
        gamma: 1.0,
        ..config(Method::MslMov)
    };
    let a = run_experiment(&data, &tasks, &zero_lambda).unwrap();
    let b = run_experiment(&data, &tasks, &config(Method::Msl)).unwrap();
    for (ra, rb) in a.repetitions.iter().zip(&b.repetitions) {
        assert_eq!(ra.seen, rb.seen);
    }
    let naive = TrainConfig {
        lambda: 0.0,
        memory_capacity: 0,
        ..config(Method::LinearHead)
    };
    let a = run_experiment(&data, &tasks, &naive).unwrap();
    let b = run_experiment(&data, &tasks, &config(Method::FinetuneNoMemory)).unwrap();
    for (ra, rb) in a.repetitions.iter().zip(&b.repetitions) {
        assert_eq!(ra.seen, rb.seen);
    }
}

#[test]
fn reruns_are_bit_identical() {
    let (data, tasks) = data(5, 6, 3);
    let cfg = config(Method::MslMov);
    let a = run_experiment(&data, &tasks, &cfg).unwrap();
    let b = run_experiment(&data, &tasks, &cfg).unwrap();
    assert_eq!(a, b);
    a.verify().unwrap();
    // repetitions visit the domains in different orders
    let orders: BTreeSet<_> = a.repetitions.iter().map(|r| r.domain_orders.clone()).collect();
    assert_eq!(orders.len(), a.repetitions.len());
}

#[test]
fn single_task_run_collapses_to_joint_training() {
    let (data, tasks) = data(6, 4, 1);
    let cfg = config(Method::MslMov);
    let state = run_repetition(&data, &tasks, &cfg, 0, &mut NoopObserver).unwrap();
    assert_eq!(state.pair.current.num_classes(), 4);
    assert!(state.pair.old.is_none());
    let report = run_experiment(&data, &tasks, &cfg).unwrap();
    assert_eq!(report.backward_transfer, 0.0);
}

#[test]
fn averaged_metrics_are_plain_means() {
    let (data, tasks) = data(7, 6, 3);
    let cfg = TrainConfig {
        repetitions: 5,
        epochs_per_domain: 1,
        ..config(Method::MslMov)
    };
    let report = run_experiment(&data, &tasks, &cfg).unwrap();
    let mean = |f: fn(&msl_core::trainer::RepetitionReport) -> f64| {
        report.repetitions.iter().map(f).sum::<f64>() / report.repetitions.len() as f64
    };
    assert_eq!(report.repetitions.len(), 5);
    assert_eq!(report.average_accuracy, mean(|r| r.average_accuracy));
    assert_eq!(report.backward_transfer, mean(|r| r.backward_transfer));
    assert_eq!(report.unseen_accuracy, mean(|r| r.unseen_accuracy));
}

#[test]
fn teacher_snapshot_replays_end_of_task_accuracy() {
    let (data, tasks) = data(8, 6, 3);
    let cfg = config(Method::MslMov);
    let mut state = ExperimentState::new(&cfg, &data, &tasks, 0).unwrap();
    state.run_task(0, &tasks, &data, &mut NoopObserver).unwrap();
    let recorded = state.seen.get(0, 0).unwrap();
    let mut pair = state.pair.clone();
    pair.snapshot();
    let teacher = pair.old.as_ref().unwrap();
    let test: Vec<&Sample> = data.test[..data.num_sources()]
        .iter()
        .flatten()
        .filter(|s| tasks.tasks[0].contains(&s.label))
        .collect();
    let targets: Vec<usize> = test.iter().map(|s| state.labels.head_index(s.label).unwrap()).collect();
    let scores = teacher.score_matrix(&samples_to_tensor(&test).unwrap()).unwrap();
    assert_eq!(accuracy_from_scores(&scores, &targets, tasks.tasks[0].len()).unwrap(), recorded);
}

#[test]
fn teacher_never_holds_gradients() {
    let (data, tasks) = data(9, 4, 2);
    let cfg = config(Method::MslMov);
    let mut state = ExperimentState::new(&cfg, &data, &tasks, 0).unwrap();
    state.run_task(0, &tasks, &data, &mut NoopObserver).unwrap();
    state.pair.snapshot();
    state.labels.extend(&tasks.tasks[1]).unwrap();
    state.pair.current.head.expand(2, cfg.seed, None).unwrap();
    let pool: Vec<&Sample> = data.train.iter().flatten().take(6).collect();
    let batch = Batch::from_samples(&pool, &state.labels).unwrap();
    for _ in 0..5 {
        train_step(&mut state.pair, &batch, StepConfig::from(&cfg)).unwrap();
        let old = state.pair.old.as_ref().unwrap();
        assert!(old.tensors().iter().all(|t| t.grad().is_none() && !t.requires_grad()));
        assert!(state.pair.current.tensors().iter().all(|t| t.grad().is_none()));
    }
}

fn tiny_model() -> Model {
    let backbone = BackboneParams {
        activation: Activation::Relu,
        layers: vec![Linear {
            weight: Tensor::from_rows(&[vec![0.5, -0.25], vec![0.1, 0.3]]).unwrap().into_param(),
            bias: Tensor::vector(vec![0.0, 0.1]).into_param(),
        }],
    };
    let mut head = Head::new(HeadKind::Mahalanobis, 2, 2).unwrap();
    head.expand(2, 1, None).unwrap();
    Model::new(backbone, head)
}

fn batch_loss(model: &Model, batch: &Batch) -> f64 {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let x = tape.constant(batch.features.clone());
    let s = model.forward(&mut tape, &vars, x).unwrap();
    let l = ce_loss(&mut tape, s, &batch.labels).unwrap();
    tape.value(l).item()
}

#[test]
fn one_step_on_one_sample_descends() {
    let batch = Batch::new(Tensor::from_rows(&[vec![1.0, -0.5]]).unwrap(), vec![1]).unwrap();
    let mut pair = ModelPair::new(tiny_model(), 0.96).unwrap();
    let before = train_step(&mut pair, &batch, StepConfig { learning_rate: 0.01, lambda: 1e-3, tau: 2.0 }).unwrap();
    assert_eq!(before, batch_loss(&tiny_model(), &batch));
    assert!(batch_loss(&pair.current, &batch) < before);
}

#[test]
fn sgd_descends_on_squared_norm() {
    let mut model = tiny_model();
    let loss = |m: &Model| m.flat_params().iter().map(|p| p * p).sum::<f64>();
    let mut last = loss(&model);
    for _ in 0..100 {
        for t in model.tensors_mut() {
            let g: Vec<f64> = t.data().iter().map(|p| 2.0 * p).collect();
            t.set_grad(g).unwrap();
        }
        sgd_step(&mut model, 0.01).unwrap();
        let now = loss(&model);
        assert!(now < last);
        last = now;
    }
}

#[test]
fn generator_without_shift_or_noise_repeats_one_domain() {
    let pool = generate_synthetic(&SyntheticConfig {
        shift_strength: 0.0,
        noise_sigma: 0.0,
        num_classes: 3,
        m_domains: 3,
        d: 4,
        per_cell_count: 5,
        ..Default::default()
    })
    .unwrap();
    let strip = |dom: &msl_core::stream::DomainSplit| -> Vec<(Vec<u64>, usize)> {
        dom.train
            .iter()
            .chain(&dom.test)
            .map(|s| (s.features.iter().map(|v| v.to_bits()).collect(), s.label))
            .collect()
    };
    assert_eq!(strip(&pool.domains[0]), strip(&pool.domains[1]));
    assert_eq!(strip(&pool.domains[0]), strip(&pool.domains[2]));
}

/// Nearest-class-mean probe, a linear classifier.
fn probe_accuracy(train: &[&Sample], test: &[&Sample], classes: usize) -> f64 {
    let d = train[0].features.len();
    let mut means = vec![vec![0.0; d]; classes];
    let mut counts = vec![0usize; classes];
    for s in train {
        counts[s.label] += 1;
        means[s.label].iter_mut().zip(&s.features).for_each(|(m, x)| *m += x);
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c as f64);
    }
    let hits = test
        .iter()
        .filter(|s| {
            let scores: Vec<f64> = means
                .iter()
                .map(|m| m.iter().zip(&s.features).map(|(a, b)| 2.0 * a * b - a * a).sum())
                .collect();
            msl_core::metrics::argmax(&scores) == s.label
        })
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn shifted_domains_open_a_generalization_gap() {
    let (mut seen_acc, mut unseen_acc) = (0.0, 0.0);
    for seed in 0..5 {
        let pool = generate_synthetic(&SyntheticConfig {
            shift_strength: 0.5,
            seed,
            ..Default::default()
        })
        .unwrap();
        let train: Vec<&Sample> = pool.domains[..2].iter().flat_map(|d| &d.train).collect();
        let seen: Vec<&Sample> = pool.domains[..2].iter().flat_map(|d| &d.test).collect();
        let unseen: Vec<&Sample> = pool.domains[2].train.iter().chain(&pool.domains[2].test).collect();
        seen_acc += probe_accuracy(&train, &seen, pool.num_classes) / 5.0;
        unseen_acc += probe_accuracy(&train, &unseen, pool.num_classes) / 5.0;
    }
    assert!(unseen_acc < seen_acc, "unseen {unseen_acc} vs seen {seen_acc}");
}

#[test]
fn synthetic_table_round_trip() {
    let pool = generate_synthetic(&SyntheticConfig {
        num_classes: 3,
        m_domains: 2,
        d: 4,
        per_cell_count: 6,
        ..Default::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("features.csv");
    write_features_table(&pool, &path).unwrap();
    assert_eq!(load_features_table(&path).unwrap(), pool);
    assert_eq!(generate_synthetic(&SyntheticConfig { num_classes: 3, m_domains: 2, d: 4, per_cell_count: 6, ..Default::default() }).unwrap(), pool);
}

#[test]
fn backbone_init_is_bounded_and_deterministic() {
    let cfg = BackboneConfig {
        input_dim: 4,
        hidden_dims: vec![],
        feature_dim: 2500,
        activation: Activation::Relu,
        seed: 17,
    };
    let a = backbone_init(&cfg).unwrap();
    assert_eq!(a, backbone_init(&cfg).unwrap());
    let w = &a.layers[0].weight;
    assert_eq!(w.len(), 10_000);
    assert!(w.data().iter().all(|v| (-0.5..=0.5).contains(v)));
    assert!(a.layers[0].bias.data().iter().all(|b| *b == 0.0));
}
