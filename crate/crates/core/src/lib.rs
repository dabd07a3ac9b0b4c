//! Cross-domain continual learning on dense features.
//!
//! A small reverse-mode autodiff tape drives an MLP backbone and a classifier
//! head that grows with every task. The head is either a bank of low-rank
//! Mahalanobis similarities `‖L_c (h − b_c)‖²` or plain inner products. Old
//! knowledge is kept through a rehearsal memory and, optionally, distillation
//! against a teacher that follows the learner by an exponential moving
//! average.

pub mod backbone;
pub mod ema;
pub mod error;
pub mod head;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod msl_head;
pub mod rng;
pub mod stream;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use backbone::{backbone_init, Activation, BackboneConfig, BackboneParams};
pub use ema::{ema_update, snapshot_teacher, ModelPair};
pub use error::{Error, Result};
pub use head::{Head, HeadKind, LinearHead};
pub use losses::{ce_loss, distillation_loss, total_loss, LossConfig};
pub use metrics::{average_accuracy, backward_transfer, evaluate_accuracy, AccuracyMatrix};
pub use model::Model;
pub use msl_head::{similarity_fullrank, similarity_lowrank, MslHead};
pub use stream::{
    generate_synthetic, load_features_table, split_tasks, DomainDataset, DomainPool, Sample, SyntheticConfig,
    TaskStream,
};
pub use tape::{finite_difference_grad, stable_log_softmax, Tape, Var};
pub use tensor::Tensor;
pub use trainer::{
    run_experiment, run_experiment_with_models, run_experiment_with_observer, sgd_step, train_step, ExperimentReport, ExperimentState,
    Method, TrainConfig,
};
