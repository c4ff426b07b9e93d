// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoder-only transformer engine with capture and patching hooks.

pub mod config;
pub mod forward;
pub mod tokenizer;
pub mod toy;
pub mod weights;

pub use config::ModelConfig;
pub use forward::{
    forward_with_capture, forward_with_intervention, softmax, ActivationTrace, Component,
    InterventionSpec, PatchEntry,
};
pub use tokenizer::{tokenize_with_subject, TokenSequence, Tokenizer, WordTokenizer};
pub use weights::{NamedTensor, WeightBundle};
