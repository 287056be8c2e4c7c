//! Muscle-actuated balance recovery for a planar musculoskeletal model.
//!
//! The crate covers Hill-type muscles ([`muscle`]), planar skeleton dynamics
//! with penalty contact ([`plant`]), a small MLP library ([`nnet`]), PPO and
//! muscle-coordination training ([`rl`]), the balance environment ([`env`]) and
//! COM-state balance regions ([`region`]).

pub mod env;
pub mod error;
pub mod muscle;
pub mod nnet;
pub mod plant;
pub mod region;
pub mod rl;
pub mod rng;

pub use error::{Error, Result};
