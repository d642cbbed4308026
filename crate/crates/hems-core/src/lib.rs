//! Home energy management: simulation environment, model-predictive expert,
//! adversarial inverse reinforcement learning, and benchmark baselines.

pub mod error;
pub mod airl;
pub mod bench;
pub mod demos;
pub mod env;
pub mod mpc;
pub mod nn;
pub mod ppo;
pub mod surrogate;
pub mod traces;

pub use error::{Error, Result};
