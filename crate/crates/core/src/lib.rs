//! Adaptive exploration/exploitation for policy optimization.
//!
//! A state autoencoder turns reconstruction error into an intrinsic
//! reward, a mastery evaluator scores how real each reconstruction looks,
//! and the two are mixed as `r_ext + (1 - alpha) * r_int`. Around that
//! core sit a small neural-network substrate, deterministic gridworlds,
//! a PPO trainer, numerical checks of the entropy results the mixing rule
//! rests on, and an experiment harness.

pub mod autoencoder;
pub mod env;
pub mod error;
pub mod harness;
pub mod mastery;
pub mod nn;
pub mod ppo;
pub mod reward;
pub mod theory;

pub use error::{Error, Result};

#[cfg(test)]
mod tests;
