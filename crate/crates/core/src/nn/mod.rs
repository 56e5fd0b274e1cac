//! Minimal numerical substrate for the neural clusterer: dense matrices,
//! reverse-mode differentiation, transformer blocks, Adam and a
//! finite-difference gradient checker.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{AttentionMask, Graph, Var, BLOCKED_LOGIT};
pub use params::{AdamConfig, ModelParams, ParamGrads, ParamId};
pub use tensor::Tensor;
