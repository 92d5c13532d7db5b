//! C3RL: siamese contrastive enhancement for multivariate time series
//! forecasters, built on a self-contained reverse-mode autodiff stack.
//!
//! Layout follows the pipeline: [`tensor`] is the differentiation substrate,
//! [`nn`] the trainable building blocks, [`models`] the base forecasters,
//! [`c3rl`] the siamese construction and joint loss, [`data`] the dataset
//! pipeline, and [`runner`] the experiment orchestration behind the CLI.

pub mod c3rl;
pub mod check;
pub mod data;
pub mod error;
pub mod models;
pub mod nn;
pub mod runner;
pub mod tensor;

pub use error::{Error, Result};
