// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded test suites: planted models with a known minimal rule, and random
//! prompts for the toy transformer.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WasdError};
use crate::model::{
    planted_activation, PlantedModel, PlantedModelSpec, PlantedNeuron, Prompt, TokenId,
};
use crate::perturb::{NeighborhoodSample, PerturbParams};
use crate::rng::{mix_all, SplitMix64};

const MAX_ATTEMPTS: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedSuiteParams {
    pub count: usize,
    pub vocab_size: usize,
    pub min_neurons: usize,
    pub max_neurons: usize,
    pub min_prompt_len: usize,
    pub max_prompt_len: usize,
    pub max_rule_size: usize,
    pub max_edits: usize,
    pub protect_last_k: usize,
    /// Largest fraction of neighbors allowed to satisfy one planted neuron
    /// on their own; keeps every planted predicate necessary at this `tau`.
    pub tau: f64,
    /// Smallest predicate scaling the suite must support.
    pub min_lambda: f64,
    pub seed: u64,
}

impl Default for PlantedSuiteParams {
    fn default() -> Self {
        Self {
            count: 50,
            vocab_size: 16,
            min_neurons: 8,
            max_neurons: 12,
            min_prompt_len: 4,
            max_prompt_len: 6,
            max_rule_size: 3,
            max_edits: 1,
            protect_last_k: 1,
            tau: 0.9,
            min_lambda: 6.5,
            seed: 0,
        }
    }
}

impl PlantedSuiteParams {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(WasdError::InvalidConfig(m.into()));
        if self.count == 0 {
            return bad("suite count must be at least 1");
        }
        if self.min_neurons == 0 || self.min_neurons > self.max_neurons {
            return bad("invalid neuron range");
        }
        if self.min_prompt_len <= self.protect_last_k || self.min_prompt_len > self.max_prompt_len {
            return bad("invalid prompt length range");
        }
        if self.max_rule_size == 0 || self.max_rule_size > self.min_neurons {
            return bad("max_rule_size must be in 1..=min_neurons");
        }
        if self.vocab_size < 2 || self.max_edits == 0 {
            return bad("vocab_size >= 2 and max_edits >= 1 required");
        }
        Ok(())
    }

    pub fn perturb(&self) -> PerturbParams {
        PerturbParams {
            protect_last_k: self.protect_last_k,
            ..PerturbParams::default()
        }
    }
}

/// One planted model with the prompt it should be explained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedInstance {
    pub id: usize,
    pub model: PlantedModelSpec,
    pub prompt: Prompt,
    pub max_edits: usize,
    pub protect_last_k: usize,
}

impl PlantedInstance {
    pub fn build(&self) -> Result<PlantedModel> {
        PlantedModel::new(self.model.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSuite {
    pub params: PlantedSuiteParams,
    pub instances: Vec<PlantedInstance>,
}

impl PlantedSuite {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn generate_planted_suite(params: &PlantedSuiteParams) -> Result<PlantedSuite> {
    params.validate()?;
    let instances = (0..params.count)
        .map(|i| planted_instance(params, i))
        .collect::<Result<_>>()?;
    Ok(PlantedSuite {
        params: params.clone(),
        instances,
    })
}

/// Instance `index` of the suite. Rule size cycles through
/// `1..=max_rule_size`. Draws are retried until the planted rule is the
/// unique minimal rule over the enumerated neighborhood:
///
/// - no neighbor satisfies the whole planted rule naturally;
/// - each planted neuron is pivotal (some neighbor fails only that neuron);
/// - fewer than `tau` of the neighbors satisfy any single planted neuron;
/// - a clamp of `min_lambda` times the largest neighbor activation clears
///   every threshold.
///
/// Each threshold sits just under the prompt's own activation, so the
/// prompt itself yields the target with a positive margin.
pub fn planted_instance(params: &PlantedSuiteParams, index: usize) -> Result<PlantedInstance> {
    params.validate()?;
    let k = 1 + index % params.max_rule_size;
    let perturb = params.perturb();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = SplitMix64::new(mix_all(params.seed, [index as u64, attempt]));
        let n = params.min_neurons
            + rng.below((params.max_neurons - params.min_neurons + 1) as u64) as usize;
        let len = params.min_prompt_len
            + rng.below((params.max_prompt_len - params.min_prompt_len + 1) as u64) as usize;
        let tokens: Vec<TokenId> = (0..len)
            .map(|_| TokenId(rng.below(params.vocab_size as u64) as u32))
            .collect();
        let prompt = Prompt::new(tokens)?;
        let target = TokenId(rng.below(params.vocab_size as u64) as u32);
        let model_seed = rng.next_u64();
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);

        let neighbors =
            NeighborhoodSample::exhaustive(&prompt, params.max_edits, &perturb, params.vocab_size)?;
        let eligible: Vec<usize> = order
            .into_iter()
            .filter(|&j| (0.05..=0.95).contains(&planted_activation(model_seed, j, &prompt)))
            .collect();
        if eligible.len() < k {
            continue;
        }
        let chosen = &eligible[..k];
        let origin: Vec<f64> = chosen
            .iter()
            .map(|&j| planted_activation(model_seed, j, &prompt))
            .collect();
        let acts: Vec<Vec<f64>> = neighbors
            .prompts
            .iter()
            .map(|p| {
                chosen
                    .iter()
                    .map(|&j| planted_activation(model_seed, j, p))
                    .collect()
            })
            .collect();

        // Midway between the prompt's activation and the closest neighbor
        // activation below it. Neighbors at or above the prompt's value
        // satisfy the neuron; single-neuron rules require there be none.
        let mut thresholds = Vec::with_capacity(k);
        for s in 0..k {
            if k == 1 && acts.iter().any(|a| a[s] >= origin[s]) {
                break;
            }
            let below = acts
                .iter()
                .map(|a| a[s])
                .filter(|&v| v < origin[s])
                .fold(0.0, f64::max);
            thresholds.push((origin[s] + below) / 2.0);
        }
        if thresholds.len() < k {
            continue;
        }
        if !rule_is_pinned(&acts, &thresholds, params) {
            continue;
        }
        let mut planted: Vec<PlantedNeuron> = chosen
            .iter()
            .zip(&thresholds)
            .map(|(&neuron, &threshold)| PlantedNeuron { neuron, threshold })
            .collect();
        planted.sort_by_key(|p| p.neuron);
        let spec = PlantedModelSpec {
            vocab_size: params.vocab_size,
            neuron_count: n,
            planted,
            target_token: target,
            seed: model_seed,
            max_context: PlantedModelSpec::DEFAULT_MAX_CONTEXT,
        };
        return Ok(PlantedInstance {
            id: index,
            model: spec,
            prompt,
            max_edits: params.max_edits,
            protect_last_k: params.protect_last_k,
        });
    }
    Err(WasdError::InvalidConfig(format!(
        "no planted instance found for index {index}"
    )))
}

fn rule_is_pinned(acts: &[Vec<f64>], thresholds: &[f64], params: &PlantedSuiteParams) -> bool {
    let k = thresholds.len();
    let total = acts.len() as f64;
    let satisfied = |a: &[f64], s: usize| a[s] >= thresholds[s];
    if acts.iter().any(|a| (0..k).all(|s| satisfied(a, s))) {
        return false;
    }
    (0..k).all(|s| {
        let pivotal = acts
            .iter()
            .any(|a| !satisfied(a, s) && (0..k).all(|o| o == s || satisfied(a, o)));
        let alone = acts.iter().filter(|a| satisfied(a, s)).count() as f64 / total;
        let max_act = acts.iter().map(|a| a[s]).fold(0.0, f64::max);
        pivotal && alone < params.tau && max_act * params.min_lambda >= thresholds[s]
    })
}

/// `count` uniform random prompts with lengths in `min_len..=max_len`.
pub fn toy_prompt_suite(
    count: usize,
    min_len: usize,
    max_len: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<Vec<Prompt>> {
    if count == 0 || min_len == 0 || min_len > max_len || vocab_size == 0 {
        return Err(WasdError::InvalidConfig(
            "invalid prompt suite parameters".into(),
        ));
    }
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            let len = min_len + rng.below((max_len - min_len + 1) as u64) as usize;
            Prompt::new(
                (0..len)
                    .map(|_| TokenId(rng.below(vocab_size as u64) as u32))
                    .collect(),
            )
        })
        .collect()
}
