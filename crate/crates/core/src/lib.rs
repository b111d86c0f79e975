//! TD3 learning from a behavior-cloned reference-action generator (TD3fG),
//! plus the baselines and ablations it is compared against, on a built-in
//! corridor-walker environment.

pub mod agent;
pub mod demo;
pub mod env;
pub mod error;
pub mod explore;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod sched;

pub use error::{Error, Result};
