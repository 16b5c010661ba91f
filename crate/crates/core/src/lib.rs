//! Referential signalling game between a Sender and a Receiver that talk
//! through a discrete channel, trained end to end with the straight-through
//! Gumbel-Softmax estimator.
//!
//! The crate is organised bottom-up:
//!
//! - [`channel`]: Gumbel noise, relaxed and straight-through categorical
//!   sampling, message/EoS semantics.
//! - [`nn`]: the small manual-backprop layer set everything else is built on.
//! - [`agents`]: Sender and Receiver networks and the ranking hinge loss.
//! - [`vision`]: convolutional feature extractors and their weight regimes.
//! - [`augment`]: image transforms (jitter, noise, rotation, contrastive views).
//! - [`tasks`]: rotation-prediction head and multi-objective loss weighting.
//! - [`pretrain`]: contrastive and supervised extractor pretraining.
//! - [`engine`]: batch games, training and evaluation loops, experiments.
//! - [`metrics`]: communication and visual-semantics measures and baselines.
//! - [`harness`]: CIFAR-10 ingestion, configuration, logs and plot data.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iteration otherwise. Every
//! reduction has a fixed evaluation order, so results do not depend on the
//! thread count.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod augment;
pub mod channel;
pub mod engine;
pub mod error;
mod fsio;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod pretrain;
pub mod rng;
pub mod tasks;
pub mod vision;

pub use error::{Error, Result};
