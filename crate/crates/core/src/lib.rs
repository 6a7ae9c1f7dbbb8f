//! Knee radiograph KL grading: preprocessing, class-weighted CNN training
//! and stacked meta-learning over base-learner probabilities.

pub mod cli;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub mod nn;
pub mod persist;
