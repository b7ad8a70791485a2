//! Safe reinforcement learning for frequency regulation with a closed-form
//! gauge-map safety filter on polytopic robust controlled-invariant sets.

pub mod cli;
pub mod config;
pub mod ddpg;
pub mod error;
pub mod invariance;
pub mod lp;
pub mod nn;
pub mod plant;
pub mod policy;
pub mod polytope;

pub use config::Tolerances;
pub use error::{Error, Result};
