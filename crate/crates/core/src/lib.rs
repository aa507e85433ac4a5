//! Tools for reproducing, explaining and mitigating implicit demographic
//! bias in CNN and GRU text classifiers.

pub mod baselines;
pub mod checkpoint;
pub mod classifiers;
pub mod corpus;
pub mod debiaser;
pub mod error;
pub mod explainer;
pub mod fairness;
pub mod nn;
pub mod overlap;
pub mod runner;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
