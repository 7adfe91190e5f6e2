//! Discrete speech-unit toolkit for simulating durational foreign accents.
//!
//! The pipeline quantizes frame features into unit ids with a k-means
//! codebook, collapses repeated units, re-predicts each unit's duration with
//! a convolutional duration model trained on native unit streams, and expands
//! the result back to a frame-wise unit sequence. The [`eval`] module holds
//! the prosody and rhythm metrics used to compare outputs with references.

pub mod accent;
pub mod dataio;
pub mod durmodel;
pub mod error;
pub mod eval;
pub mod rng;
pub mod synthgen;
pub mod tokenizer;
pub mod unitseq;

pub use accent::{modify_sequence, simulate_accent, PipelineMode};
pub use dataio::{
    Codebook, FeatureMatrix, PhonemeAlignment, PhonemeSpan, ProsodyTrack, Run,
    RunLengthSequence, Stress, UnitSequence,
};
pub use durmodel::{DurationModel, DurationModelConfig, TrainingExample};
pub use error::{Error, Result};
