//! Unsupervised domain adaptation for semantic segmentation by adversarial
//! alignment of entropy maps concatenated with predicted edge probabilities.
//!
//! The crate covers the whole desk-scale pipeline: procedural source/target
//! scene generation ([`scenegen`]), Canny edge ground truth ([`edges`]), the
//! multi-head network and losses ([`nn`]), adversarial training and
//! self-training ([`adapt`]), scoring and ablations ([`evalkit`]) and the
//! command line ([`cli`]).

pub mod adapt;
pub mod cli;
pub mod config;
pub mod edges;
pub mod error;
pub mod evalkit;
pub mod nn;
pub mod pnm;
pub mod scenegen;

pub use error::{Error, Result};
