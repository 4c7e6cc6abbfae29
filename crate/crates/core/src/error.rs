// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the engine.

use crate::model::NeuronRef;

/// Errors raised by model construction, forward passes, search and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum WasdError {
    /// A configuration or spec failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The prompt is empty or holds a token outside the vocabulary.
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),

    /// Prompt (or generation) longer than the model context.
    #[error("context overflow: length {len} exceeds max context {max}")]
    ContextOverflow {
        /// Offending length.
        len: usize,
        /// Model context limit.
        max: usize,
    },

    /// An intervention targets a neuron outside the grid for this prompt.
    #[error("unknown neuron {0} for prompt length {1}")]
    UnknownNeuron(NeuronRef, usize),

    /// Two interventions target the same neuron.
    #[error("conflicting interventions on {0}")]
    ConflictingIntervention(NeuronRef),

    /// An intervention or predicate value is NaN or infinite.
    #[error("non-finite value {value} for {neuron}")]
    NonFinite {
        /// Target neuron.
        neuron: NeuronRef,
        /// The rejected value.
        value: f64,
    },

    /// The requested attributor cannot run on this model.
    #[error("attributor unsupported: {0}")]
    UnsupportedAttributor(String),

    /// A neighborhood (or suite) with no prompts.
    #[error("empty neighborhood")]
    EmptyNeighborhood,

    /// Prompt too short for the requested protected suffix.
    #[error("prompt of length {len} too short to protect the last {protect} tokens")]
    PromptTooShort {
        /// Prompt length.
        len: usize,
        /// Requested protected suffix.
        protect: usize,
    },

    /// Exhaustive enumeration exceeded its configured bound.
    #[error("enumeration bound exceeded: more than {bound} {what}")]
    BoundExceeded {
        /// What was being enumerated.
        what: &'static str,
        /// The configured bound.
        bound: usize,
    },

    /// No neutral prefix preserved the model output.
    #[error("no neutral prefix preserves the output ({tried} tried)")]
    NoNeutralPrefix {
        /// Number of prefixes attempted.
        tried: usize,
    },

    /// Serialization failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),

    /// Filesystem failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, WasdError>;
