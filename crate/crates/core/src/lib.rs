//! Offline reinforcement learning from pairwise preference feedback on small
//! tabular MDPs.
//!
//! The crate covers exact MDP evaluation, preference models and data
//! generation, reward/transition/advantage function classes, maximum
//! likelihood fitting, likelihood-slack confidence sets, robust min-max
//! planning, the action-comparison variant, concentrability coefficients,
//! hard instance pairs, and a seeded experiment harness.

pub mod action;
pub mod analysis;
pub mod classes;
pub mod confidence;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod mle;
pub mod planner;
pub mod preference;

pub use error::{Error, Result};
