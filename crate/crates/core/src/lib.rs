//! Desk-scale transformer sentiment pipeline.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithmic piece:
//! a define-by-run reverse-mode tape ([`tape`]), a subword tokenizer
//! ([`tokenizer`]), the encoder with its three pretraining recipes
//! ([`model`], [`pretrain`]), fine-tuning with early stopping ([`finetune`]),
//! soft-voting ensembles ([`ensemble`]), distillation ([`distill`]),
//! augmentation ([`augment`]), metrics ([`metrics`]) and dataset utilities
//! ([`data`]). File IO and the command line live in the `msnt` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod augment;
pub mod data;
pub mod distill;
pub mod ensemble;
mod error;
pub mod finetune;
pub mod label;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod pretrain;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod tokenizer;

pub use error::{CheckpointError, Error, Result};
pub use label::{LabeledExample, Sentiment};
pub use model::{EncoderConfig, SentimentModel, Variant};
pub use tensor::Tensor;
pub use tokenizer::{TokenizedExample, Vocab};
