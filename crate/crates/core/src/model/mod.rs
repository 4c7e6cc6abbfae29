// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation models: forward passes with clamping interventions.
//!
//! A model exposes a grid of scalar activation sites ([`NeuronRef`]) and
//! accepts a set of [`Interventions`] that hard-code some of those sites
//! before downstream computation consumes them. Two built-in models are
//! provided: a small decoder-only [`ToyTransformer`] and a
//! [`PlantedModel`] whose output is governed by a known threshold rule.

mod planted;
mod tokenizer;
mod toy;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WasdError};

pub use planted::{planted_activation, PlantedModel, PlantedModelSpec, PlantedNeuron};
pub use tokenizer::WordHashTokenizer;
pub use toy::{ToyTransformer, ToyTransformerConfig};

/// Index into a model vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A non-empty token sequence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Prompt(Vec<TokenId>);

impl Prompt {
    pub fn new(tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(WasdError::InvalidPrompt(
                "prompt must hold at least one token".into(),
            ));
        }
        Ok(Self(tokens))
    }

    pub fn from_ids<I: IntoIterator<Item = u32>>(ids: I) -> Result<Self> {
        Self::new(ids.into_iter().map(TokenId).collect())
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> TokenId {
        *self.0.last().expect("prompt is non-empty")
    }

    /// `prefix ++ self`.
    pub fn prepend(&self, prefix: &[TokenId]) -> Prompt {
        let mut tokens = Vec::with_capacity(prefix.len() + self.len());
        tokens.extend_from_slice(prefix);
        tokens.extend_from_slice(&self.0);
        Prompt(tokens)
    }

    /// `self ++ [token]`.
    pub fn push(&self, token: TokenId) -> Prompt {
        let mut tokens = self.0.clone();
        tokens.push(token);
        Prompt(tokens)
    }

    /// Check every token against a vocabulary size.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self.0.iter().find(|t| t.index() >= vocab_size) {
            Some(t) => Err(WasdError::InvalidPrompt(format!(
                "token {t} outside vocabulary of size {vocab_size}"
            ))),
            None => Ok(()),
        }
    }
}

impl<'de> Deserialize<'de> for Prompt {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<TokenId>::deserialize(d)?;
        Prompt::new(tokens).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.0.iter().map(|t| t.0.to_string()).collect();
        write!(f, "[{}]", ids.join(" "))
    }
}

/// Identity of one clampable scalar activation site.
///
/// Positions are counted from the end of the prompt (0 = final token) so
/// that prepending tokens keeps the identities of the final-token sites.
/// The total order is `(layer, pos_from_end, channel)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeuronRef {
    pub layer: u32,
    pub channel: u32,
    pub pos_from_end: u32,
}

impl NeuronRef {
    pub const fn new(layer: u32, channel: u32, pos_from_end: u32) -> Self {
        Self {
            layer,
            channel,
            pos_from_end,
        }
    }

    /// Whether the site exists for a prompt of `len` tokens.
    #[inline]
    pub fn exists_for(&self, len: usize) -> bool {
        (self.pos_from_end as usize) < len
    }

    fn key(&self) -> (u32, u32, u32) {
        (self.layer, self.pos_from_end, self.channel)
    }
}

impl PartialOrd for NeuronRef {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for NeuronRef {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Display for NeuronRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L{} C{} P-{}",
            self.layer, self.channel, self.pos_from_end
        )
    }
}

/// Clamp one neuron to a value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub target: NeuronRef,
    pub value: f64,
}

/// A validated set of interventions: finite values, one per neuron.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interventions(BTreeMap<NeuronRef, f64>);

impl Interventions {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new<I: IntoIterator<Item = Intervention>>(items: I) -> Result<Self> {
        let mut map = BTreeMap::new();
        for Intervention { target, value } in items {
            if !value.is_finite() {
                return Err(WasdError::NonFinite {
                    neuron: target,
                    value,
                });
            }
            if map.insert(target, value).is_some() {
                return Err(WasdError::ConflictingIntervention(target));
            }
        }
        Ok(Self(map))
    }

    pub fn single(target: NeuronRef, value: f64) -> Result<Self> {
        Self::new([Intervention { target, value }])
    }

    pub fn get(&self, neuron: &NeuronRef) -> Option<f64> {
        self.0.get(neuron).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NeuronRef, &f64)> {
        self.0.iter()
    }

    /// Fail if any target lies outside `grid_ok` for a prompt of `len` tokens.
    pub(crate) fn check<F: Fn(&NeuronRef) -> bool>(&self, len: usize, grid_ok: F) -> Result<()> {
        for neuron in self.0.keys() {
            if !neuron.exists_for(len) || !grid_ok(neuron) {
                return Err(WasdError::UnknownNeuron(*neuron, len));
            }
        }
        Ok(())
    }
}

/// Result of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub next_token: TokenId,
    pub logits: Vec<f64>,
    pub activations: BTreeMap<NeuronRef, f64>,
}

/// Argmax with ties broken by the lowest index.
pub fn argmax(logits: &[f64]) -> TokenId {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    TokenId(best as u32)
}

/// A model exposing per-neuron activations and accepting clamps.
///
/// Implementations must be pure: repeated calls with identical arguments
/// return identical outputs, and interventions are never stored on the model.
pub trait ActivationModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn max_context(&self) -> usize;

    /// Stable identity used to key attribution caches.
    fn identity(&self) -> u64;

    /// Clampable sites for a prompt of `prompt_len` tokens, sorted by
    /// [`NeuronRef`] order and duplicate-free.
    fn enumerate_neurons(&self, prompt_len: usize) -> Result<Vec<NeuronRef>>;

    /// Full forward pass, reporting every activation.
    fn forward(&self, prompt: &Prompt, interventions: &Interventions) -> Result<ModelOutput>;

    /// Forward pass that only needs the logits. Models may skip recording
    /// activations here.
    fn logits(&self, prompt: &Prompt, interventions: &Interventions) -> Result<Vec<f64>> {
        Ok(self.forward(prompt, interventions)?.logits)
    }

    /// Greedy next token.
    fn next_token(&self, prompt: &Prompt, interventions: &Interventions) -> Result<TokenId> {
        Ok(argmax(&self.logits(prompt, interventions)?))
    }

    /// Downcast hook for attributors that need ground truth.
    fn as_planted(&self) -> Option<&PlantedModel> {
        None
    }
}

/// Check a prompt against vocabulary and context limits.
pub(crate) fn check_prompt(prompt: &Prompt, vocab_size: usize, max_context: usize) -> Result<()> {
    if prompt.len() > max_context {
        return Err(WasdError::ContextOverflow {
            len: prompt.len(),
            max: max_context,
        });
    }
    prompt.validate(vocab_size)
}

/// Serializable description of a built-in model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Toy(ToyTransformerConfig),
    Planted(PlantedModelSpec),
}

impl ModelSpec {
    pub fn build(&self) -> Result<Model> {
        Ok(match self {
            ModelSpec::Toy(cfg) => Model::Toy(ToyTransformer::new(cfg.clone())?),
            ModelSpec::Planted(spec) => Model::Planted(PlantedModel::new(spec.clone())?),
        })
    }
}

/// Either built-in model.
#[derive(Debug, Clone)]
pub enum Model {
    Toy(ToyTransformer),
    Planted(PlantedModel),
}

impl Model {
    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Toy(m) => ModelSpec::Toy(m.config().clone()),
            Model::Planted(m) => ModelSpec::Planted(m.spec().clone()),
        }
    }

    fn inner(&self) -> &dyn ActivationModel {
        match self {
            Model::Toy(m) => m,
            Model::Planted(m) => m,
        }
    }
}

impl ActivationModel for Model {
    fn vocab_size(&self) -> usize {
        self.inner().vocab_size()
    }
    fn max_context(&self) -> usize {
        self.inner().max_context()
    }
    fn identity(&self) -> u64 {
        self.inner().identity()
    }
    fn enumerate_neurons(&self, prompt_len: usize) -> Result<Vec<NeuronRef>> {
        self.inner().enumerate_neurons(prompt_len)
    }
    fn forward(&self, prompt: &Prompt, interventions: &Interventions) -> Result<ModelOutput> {
        self.inner().forward(prompt, interventions)
    }
    fn logits(&self, prompt: &Prompt, interventions: &Interventions) -> Result<Vec<f64>> {
        self.inner().logits(prompt, interventions)
    }
    fn next_token(&self, prompt: &Prompt, interventions: &Interventions) -> Result<TokenId> {
        self.inner().next_token(prompt, interventions)
    }
    fn as_planted(&self) -> Option<&PlantedModel> {
        self.inner().as_planted()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neuron_order_is_layer_position_channel() {
        let mut v = vec![
            NeuronRef::new(1, 0, 0),
            NeuronRef::new(0, 5, 1),
            NeuronRef::new(0, 9, 0),
            NeuronRef::new(0, 1, 1),
        ];
        v.sort();
        assert_eq!(
            v,
            vec![
                NeuronRef::new(0, 9, 0),
                NeuronRef::new(0, 1, 1),
                NeuronRef::new(0, 5, 1),
                NeuronRef::new(1, 0, 0),
            ]
        );
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), TokenId(1));
        assert_eq!(argmax(&[2.0, 2.0]), TokenId(0));
    }

    #[test]
    fn conflicting_interventions_rejected() {
        let n = NeuronRef::new(0, 1, 0);
        let err = Interventions::new([
            Intervention {
                target: n,
                value: 1.0,
            },
            Intervention {
                target: n,
                value: 2.0,
            },
        ])
        .unwrap_err();
        assert!(matches!(err, WasdError::ConflictingIntervention(_)));
        assert!(matches!(
            Interventions::single(n, f64::NAN).unwrap_err(),
            WasdError::NonFinite { .. }
        ));
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(Prompt::new(vec![]).is_err());
        assert!(serde_json::from_str::<Prompt>("[]").is_err());
        let p: Prompt = serde_json::from_str("[3, 1]").unwrap();
        assert_eq!(p.tokens(), &[TokenId(3), TokenId(1)]);
    }

    #[test]
    fn model_spec_json_is_tagged() {
        let spec = ModelSpec::Toy(ToyTransformerConfig::default());
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(json["kind"], "toy");
        assert_eq!(json["vocab_size"], 64);
        let back: ModelSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, spec);
    }
}
