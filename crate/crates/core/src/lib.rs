//! Evaluation of token-level explanations of binary sentiment classifiers
//! against human rationales.

pub mod corpus;
pub mod explainers;
pub mod faithfulness;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod text;
