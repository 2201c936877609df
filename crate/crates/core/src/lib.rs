//! Joint learning of a deep Koopman surrogate, a TD critic and a
//! deterministic policy, with small built-in control tasks and
//! finite-difference diagnostics.
//!
//! The surrogate lifts a state `x` to `g(x)` and predicts
//! `x̂' = C (A g(x) + B u)`, where `A`, `B`, `C` are refit by least squares on
//! every replayed batch. The actor is trained through this one-step model and
//! the critic's value of the predicted successor.

pub mod actor;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod critic;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod koopman;
pub mod neural;
pub mod numerics;
pub mod replay;
pub mod trainer;

pub use actor::{Actor, LinearPolicy, Policy};
pub use config::{parse_config, parse_config_str, TrainConfig};
pub use critic::Critic;
pub use error::{Error, Result};
pub use koopman::{DataBatch, KoopmanModel};
pub use numerics::Matrix;
pub use replay::{ReplayBuffer, Transition};
pub use trainer::{evaluate, train, Agent, TrainLog};
