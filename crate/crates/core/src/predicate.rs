// SPDX-License-Identifier: MIT OR Apache-2.0

//! Candidate predicate generation.
//!
//! Every neighbor prompt is passed through weight extraction. For each
//! neuron the largest recorded activation, scaled by `lambda`, becomes the
//! predicate's clamp value, and the neuron's mean contribution becomes its
//! ranking key. Neurons missing from a neighbor (their position was deleted)
//! are aggregated only over the neighbors where they exist.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{cached_wt_ext_with, AttributionCache, AttributorKind, ExtractOptions};
use crate::error::{Result, WasdError};
use crate::model::{ActivationModel, NeuronRef, Prompt, TokenId};
use crate::perturb::NeighborhoodSample;

/// Constraint `activation(neuron) = value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    #[serde(flatten)]
    pub neuron: NeuronRef,
    pub value: f64,
}

impl std::fmt::Display for Predicate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "L{} C{} P-{} := {}",
            self.neuron.layer, self.neuron.channel, self.neuron.pos_from_end, self.value
        )
    }
}

/// A predicate with the statistics it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidatePredicate {
    pub predicate: Predicate,
    pub mean_contribution: f64,
    pub max_activation: f64,
    pub observations: usize,
}

/// Observed activations and contributions per neuron across a neighborhood.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationStats {
    pub activations: BTreeMap<NeuronRef, Vec<f64>>,
    pub contributions: BTreeMap<NeuronRef, Vec<f64>>,
}

impl ActivationStats {
    /// Weight-extract every prompt of `sample`, attributing against `target`.
    pub fn collect(
        model: &dyn ActivationModel,
        sample: &NeighborhoodSample,
        kind: AttributorKind,
        target: TokenId,
        cache: &AttributionCache,
    ) -> Result<Self> {
        if sample.is_empty() {
            return Err(WasdError::EmptyNeighborhood);
        }
        let opts = ExtractOptions {
            target: Some(target),
            top_activations: None,
        };
        let maps = sample
            .prompts
            .par_iter()
            .map(|p| cached_wt_ext_with(model, p, kind, opts, cache))
            .collect::<Result<Vec<_>>>()?;
        let mut stats = Self::default();
        for map in &maps {
            for (n, rec) in map.iter() {
                stats
                    .activations
                    .entry(*n)
                    .or_default()
                    .push(rec.activation);
                stats
                    .contributions
                    .entry(*n)
                    .or_default()
                    .push(rec.contribution);
            }
        }
        Ok(stats)
    }

    /// One candidate per observed neuron, sorted by mean contribution
    /// (descending, ties by neuron order).
    pub fn candidates(&self, lambda: f64) -> Result<Vec<CandidatePredicate>> {
        check_lambda(lambda)?;
        let mut out: Vec<CandidatePredicate> = self
            .activations
            .iter()
            .map(|(n, acts)| {
                let contribs = &self.contributions[n];
                let max_activation = acts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean_contribution = contribs.iter().sum::<f64>() / contribs.len() as f64;
                CandidatePredicate {
                    predicate: Predicate {
                        neuron: *n,
                        value: max_activation * lambda,
                    },
                    mean_contribution,
                    max_activation,
                    observations: acts.len(),
                }
            })
            .collect();
        sort_candidates(&mut out);
        Ok(out)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(WasdError::InvalidConfig(format!(
            "lambda must be positive and finite, got {lambda}"
        )));
    }
    Ok(())
}

/// Descending mean contribution, ties by [`NeuronRef`] order.
pub fn sort_candidates(candidates: &mut [CandidatePredicate]) {
    candidates.sort_by(|a, b| {
        b.mean_contribution
            .total_cmp(&a.mean_contribution)
            .then(a.predicate.neuron.cmp(&b.predicate.neuron))
    });
}

/// Candidate predicates for `x` from its neighborhood.
///
/// Contributions are measured on the logit of `f(x)` for every neighbor.
pub fn generate_predicates(
    model: &dyn ActivationModel,
    x: &Prompt,
    sample: &NeighborhoodSample,
    kind: AttributorKind,
    lambda: f64,
) -> Result<Vec<CandidatePredicate>> {
    generate_predicates_cached(model, x, sample, kind, lambda, &AttributionCache::new())
}

pub fn generate_predicates_cached(
    model: &dyn ActivationModel,
    x: &Prompt,
    sample: &NeighborhoodSample,
    kind: AttributorKind,
    lambda: f64,
    cache: &AttributionCache,
) -> Result<Vec<CandidatePredicate>> {
    check_lambda(lambda)?;
    let target = crate::attribution::original_output(model, x)?;
    ActivationStats::collect(model, sample, kind, target, cache)?.candidates(lambda)
}
