//! Manipulation-action recognition from object state transitions.
//!
//! An action is a verb applied to nouns; state-changing verbs move their
//! object from a pre-state to a post-state. The network recognizes object
//! types and states in each of `k` keyframes, folds the per-frame state
//! scores into a two-row transition matrix, reads the verb off that matrix
//! and fuses verb and noun scores into an action.
//!
//! - [`ledger`]: vocabularies, effect groups, transition rules, fade targets
//! - [`synthgen`]: deterministic synthetic segments standing in for video
//! - [`diffcore`]: tensors, reverse-mode gradients, SGD
//! - [`net`]: the keyframe network and its four-term loss
//! - [`trainer`]: keyframe sampling, training loop, checkpoints
//! - [`evaluator`]: clip aggregation, top-k accuracy, many-shot precision/recall
//! - [`config`] and [`cli`]: merged run configuration and the command line

pub mod cli;
pub mod config;
pub mod diffcore;
mod error;
mod fsutil;
pub mod evaluator;
pub mod ledger;
pub mod net;
pub mod suite;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
