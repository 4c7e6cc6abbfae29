// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic model with a known sufficient rule.
//!
//! Neuron `i` on prompt `x` has activation `h(seed, i, multiset(x))` in
//! `[0, 1)`. The next token is `target_token` iff every planted neuron `s`
//! has (possibly clamped) activation `>= threshold_s`; otherwise it is a
//! hash of the token sequence into the vocabulary minus the target.
//!
//! Logits: the fallback token scores `0`, every other non-target token
//! scores `-1`, and with margin `m = min_s(a_s - threshold_s)` the target
//! scores `1 + m` when `m >= 0` and `m - 1` otherwise.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    check_prompt, ActivationModel, Interventions, ModelOutput, NeuronRef, Prompt, TokenId,
};
use crate::error::{Result, WasdError};
use crate::rng::{mix, mix_all, unit};

fn default_max_context() -> usize {
    PlantedModelSpec::DEFAULT_MAX_CONTEXT
}

/// One planted neuron and its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedNeuron {
    pub neuron: usize,
    pub threshold: f64,
}

/// Parameters of a [`PlantedModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedModelSpec {
    pub vocab_size: usize,
    pub neuron_count: usize,
    pub planted: Vec<PlantedNeuron>,
    pub target_token: TokenId,
    pub seed: u64,
    #[serde(default = "default_max_context")]
    pub max_context: usize,
}

impl PlantedModelSpec {
    pub const DEFAULT_MAX_CONTEXT: usize = 64;

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(WasdError::InvalidConfig(msg));
        if self.vocab_size < 2 {
            return bad("planted model needs a vocabulary of at least 2 tokens".into());
        }
        if self.target_token.index() >= self.vocab_size {
            return bad(format!(
                "target token {} outside vocabulary",
                self.target_token
            ));
        }
        if self.max_context == 0 {
            return bad("max_context must be at least 1".into());
        }
        if self.planted.is_empty() || self.planted.len() > self.neuron_count {
            return bad(format!(
                "planted set size {} must be in 1..={}",
                self.planted.len(),
                self.neuron_count
            ));
        }
        let mut seen = BTreeSet::new();
        for p in &self.planted {
            if p.neuron >= self.neuron_count {
                return bad(format!(
                    "planted neuron {} >= neuron count {}",
                    p.neuron, self.neuron_count
                ));
            }
            if !seen.insert(p.neuron) {
                return bad(format!("planted neuron {} listed twice", p.neuron));
            }
            if !(p.threshold > 0.0 && p.threshold < 1.0) {
                return bad(format!("threshold {} outside (0, 1)", p.threshold));
            }
        }
        Ok(())
    }
}

/// Natural activation of neuron `index` on a prompt, independent of any
/// planted set: a hash of `(seed, index, sorted tokens)` mapped to `[0, 1)`.
pub fn planted_activation(seed: u64, index: usize, prompt: &Prompt) -> f64 {
    unit(mix(mix(seed, index as u64), multiset_hash(prompt)))
}

fn multiset_hash(prompt: &Prompt) -> u64 {
    let mut ids: Vec<u64> = prompt.tokens().iter().map(|t| u64::from(t.0)).collect();
    ids.sort_unstable();
    mix_all(ids.len() as u64, ids)
}

/// Synthetic threshold-rule model. Neurons are `(0, i, 0)` for
/// `i < neuron_count`, independent of prompt length.
#[derive(Debug, Clone)]
pub struct PlantedModel {
    spec: PlantedModelSpec,
    identity: u64,
}

impl PlantedModel {
    pub fn new(spec: PlantedModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut words = vec![
            spec.vocab_size as u64,
            spec.neuron_count as u64,
            u64::from(spec.target_token.0),
        ];
        words.push(spec.seed);
        words.push(spec.max_context as u64);
        for p in &spec.planted {
            words.push(p.neuron as u64);
            words.push(p.threshold.to_bits());
        }
        let identity = mix_all(0x0070_6c61_6e74, words);
        Ok(Self { spec, identity })
    }

    pub fn spec(&self) -> &PlantedModelSpec {
        &self.spec
    }

    pub fn neuron(index: usize) -> NeuronRef {
        NeuronRef::new(0, index as u32, 0)
    }

    /// Threshold of a neuron if it is planted.
    pub fn threshold(&self, neuron: &NeuronRef) -> Option<f64> {
        if neuron.layer != 0 || neuron.pos_from_end != 0 {
            return None;
        }
        self.spec
            .planted
            .iter()
            .find(|p| p.neuron == neuron.channel as usize)
            .map(|p| p.threshold)
    }

    pub fn target_token(&self) -> TokenId {
        self.spec.target_token
    }

    /// Ground-truth sufficient rule as `(neuron, value)` pairs with each
    /// value `threshold + offset` (any `offset >= 0` is sufficient).
    pub fn ground_truth(&self, offset: f64) -> Vec<(NeuronRef, f64)> {
        let mut out: Vec<_> = self
            .spec
            .planted
            .iter()
            .map(|p| (Self::neuron(p.neuron), p.threshold + offset))
            .collect();
        out.sort_by_key(|a| a.0);
        out
    }

    /// Token emitted when the planted rule fails.
    pub fn fallback(&self, prompt: &Prompt) -> TokenId {
        let h = mix_all(
            self.spec.seed ^ 0xfa11_bac4,
            prompt.tokens().iter().map(|t| u64::from(t.0)),
        );
        let target = self.spec.target_token.0 as u64;
        let mut idx = h % (self.spec.vocab_size as u64 - 1);
        if idx >= target {
            idx += 1;
        }
        TokenId(idx as u32)
    }

    fn validate_call(&self, prompt: &Prompt, interventions: &Interventions) -> Result<()> {
        check_prompt(prompt, self.spec.vocab_size, self.spec.max_context)?;
        interventions.check(prompt.len(), |n| {
            n.layer == 0 && n.pos_from_end == 0 && (n.channel as usize) < self.spec.neuron_count
        })
    }

    fn activation(&self, index: usize, prompt: &Prompt, interventions: &Interventions) -> f64 {
        interventions
            .get(&Self::neuron(index))
            .unwrap_or_else(|| planted_activation(self.spec.seed, index, prompt))
    }

    fn compute_logits(&self, prompt: &Prompt, interventions: &Interventions) -> Vec<f64> {
        let margin = self
            .spec
            .planted
            .iter()
            .map(|p| self.activation(p.neuron, prompt, interventions) - p.threshold)
            .fold(f64::INFINITY, f64::min);
        let mut logits = vec![-1.0; self.spec.vocab_size];
        logits[self.fallback(prompt).index()] = 0.0;
        logits[self.spec.target_token.index()] = if margin >= 0.0 {
            1.0 + margin
        } else {
            margin - 1.0
        };
        logits
    }
}

impl ActivationModel for PlantedModel {
    fn vocab_size(&self) -> usize {
        self.spec.vocab_size
    }

    fn max_context(&self) -> usize {
        self.spec.max_context
    }

    fn identity(&self) -> u64 {
        self.identity
    }

    fn enumerate_neurons(&self, prompt_len: usize) -> Result<Vec<NeuronRef>> {
        if prompt_len == 0 || prompt_len > self.spec.max_context {
            return Err(WasdError::InvalidConfig(format!(
                "prompt length {prompt_len} outside 1..={}",
                self.spec.max_context
            )));
        }
        Ok((0..self.spec.neuron_count).map(Self::neuron).collect())
    }

    fn forward(&self, prompt: &Prompt, interventions: &Interventions) -> Result<ModelOutput> {
        self.validate_call(prompt, interventions)?;
        let logits = self.compute_logits(prompt, interventions);
        let activations: BTreeMap<NeuronRef, f64> = (0..self.spec.neuron_count)
            .map(|i| (Self::neuron(i), self.activation(i, prompt, interventions)))
            .collect();
        Ok(ModelOutput {
            next_token: super::argmax(&logits),
            logits,
            activations,
        })
    }

    fn logits(&self, prompt: &Prompt, interventions: &Interventions) -> Result<Vec<f64>> {
        self.validate_call(prompt, interventions)?;
        Ok(self.compute_logits(prompt, interventions))
    }

    fn as_planted(&self) -> Option<&PlantedModel> {
        Some(self)
    }
}
