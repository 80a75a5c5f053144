//! Dead-end aware recovery reinforcement learning.
//!
//! The crate is organised the way the method is run:
//!
//! - [`smdp`]: binary-cost safe MDP vocabulary (transitions, state labels, admissibility).
//! - [`envs`]: desk-scale environments and their exact tabular discretisations.
//! - [`oracle`]: dynamic programming on tabular models (dead-end enumeration,
//!   optimal cost values, shield certification).
//! - [`funcapprox`]: small MLPs, squashed Gaussian heads, Adam and checkpoints.
//! - [`pretrain`]: offline data handling and safety-critic / recovery-policy pretraining.
//! - [`online`]: shielded online training of a task policy.
//! - [`runner`]: configs, metrics, experiment orchestration and reports.

pub mod envs;
pub mod error;
pub mod funcapprox;
pub mod online;
pub mod oracle;
pub mod pretrain;
pub mod runner;
pub mod smdp;

pub use error::{Error, Result};
