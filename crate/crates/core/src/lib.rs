//! Stochastic endurance race simulator with pit-strategy learning.
//!
//! * [`model`]: deterministic lap-time mathematics.
//! * [`stochastic`]: seeded random models (start, traffic, Code60, overtakes).
//! * [`engine`]: the race loop, pit stops and the scripted opponent strategy.
//! * [`config`]: configuration loading.
//! * [`fit`]: parameter estimation from timing data.
//! * [`env`]: the reinforcement-learning environment.
//! * [`agents`]: Q-learning, DQN, evaluation and the strategy oracle.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod config;
pub mod engine;
pub mod env;
pub mod error;
pub mod fit;
pub mod model;
pub mod stochastic;

pub use error::{Error, Result};
