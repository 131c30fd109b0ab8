//! Desk-scale laboratory for regularized self-play preference fine-tuning.
//!
//! Every policy lives on an enumerable answer space, so each quantity the
//! training loop relies on (partition functions, KL terms, mixture
//! probabilities, terminating distributions) can be computed exactly and
//! checked against brute force.

pub mod error;
pub mod fsutil;
pub mod gflownet;
pub mod harness;
pub mod losses;
pub mod numeric;
pub mod optim;
pub mod policy;
pub mod preference;
pub mod rng;
pub mod selfplay;
pub mod task;

pub use error::{Result, SpinError};
