//! Miniature CNN with the grading head, class-weighted cross-entropy,
//! SGD with momentum, and finite-difference gradient checking.

mod gradcheck;
mod loss;
pub(crate) mod model;
mod optim;
mod persist;
mod train;

pub use gradcheck::{grad_check, GradCheck};
pub use loss::{weighted_ce, LossKind, LossSpec, PROB_EPS};
pub use model::{dropout_mask, expand_binary, Cache, Mode, Model, ModelConfig, OutputKind, HIDDEN_UNITS};
pub use optim::SgdMomentum;
pub use train::{evaluate, train, EpochRecord, History, TrainConfig, TrainData};
