//! Cascaded tabular GAN: per-feature generators coupled to gradient-boosted
//! auxiliary learners, with evaluation metrics and a white-box attack
//! simulator for the auxiliary learners.

pub mod attack;
pub mod cli;
pub mod container;
pub mod encode;
pub mod error;
pub mod fixtures;
pub mod gan;
pub mod gbdt;
pub mod nn;
pub mod schema;
pub mod tensor;
pub mod metrics;

pub use error::{Error, Result};
