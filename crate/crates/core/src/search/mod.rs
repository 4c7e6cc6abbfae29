// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rule search: precision estimation, additive search, pruning, and the
//! end-to-end [`explain`] pipeline.

mod algorithm;
mod generate;
mod precision;
mod rule;

use serde::{Deserialize, Serialize};

pub use algorithm::{
    additive_search, prune, prune_ordered, Phase, PruneOutcome, SearchResult, TraceStep,
};
pub use generate::intervened_generate;
pub use precision::{
    accepted_on_origin, estimate_precision, precision_detail, wilson_interval, AcceptorSpec,
    OutputAcceptor, PrecisionDetail, PrecisionEstimate, Z95,
};
pub use rule::Rule;

use crate::attribution::{original_output, AttributionCache, AttributorKind};
use crate::error::Result;
use crate::model::{ActivationModel, NeuronRef, Prompt, TokenId};
use crate::perturb::{NeighborhoodSample, PerturbParams};
use crate::predicate::generate_predicates_cached;
use crate::rng::mix;

/// How the neighborhood used for predicates and precision is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NeighborhoodMode {
    Sampled,
    /// Every distinct prompt within `max_edits` edits, excluding `x` itself.
    Enumerated {
        max_edits: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainParams {
    pub tau: f64,
    pub lambda: f64,
    pub perturb: PerturbParams,
    pub neighborhood: NeighborhoodMode,
    pub attributor: AttributorKind,
    pub acceptor: AcceptorSpec,
    /// Score rules on a second, independently seeded sample instead of the
    /// one used for predicate generation. Ignored for enumerated mode.
    pub redraw_for_search: bool,
}

impl Default for ExplainParams {
    fn default() -> Self {
        Self {
            tau: 0.9,
            lambda: 6.5,
            perturb: PerturbParams::default(),
            neighborhood: NeighborhoodMode::Sampled,
            attributor: AttributorKind::Ablation,
            acceptor: AcceptorSpec::default(),
            redraw_for_search: false,
        }
    }
}

impl ExplainParams {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        algorithm::check_tau(self.tau)?;
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(crate::WasdError::InvalidConfig(format!(
                "lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        self.perturb.validate(vocab_size)
    }
}

/// Full record of one explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub origin: Prompt,
    pub target_token: TokenId,
    pub params: ExplainParams,
    pub neighborhood_size: usize,
    pub candidate_count: usize,
    pub baseline_precision: PrecisionEstimate,
    /// Size of the additive rule before pruning.
    pub unpruned_size: usize,
    /// Final (pruned) rule, its precision, and the add + prune trace.
    pub result: SearchResult,
    /// Whether the model still outputs `target_token` on `x` with the rule enforced.
    pub origin_accepted: bool,
}

impl Explanation {
    pub fn rule(&self) -> &Rule {
        &self.result.rule
    }
}

pub(crate) fn build_sample(
    x: &Prompt,
    params: &ExplainParams,
    vocab_size: usize,
) -> Result<NeighborhoodSample> {
    match params.neighborhood {
        NeighborhoodMode::Sampled => NeighborhoodSample::draw(x, &params.perturb, vocab_size),
        NeighborhoodMode::Enumerated { max_edits } => {
            NeighborhoodSample::exhaustive(x, max_edits, &params.perturb, vocab_size)
        }
    }
}

/// Explain the model's next-token prediction on `x` with a sparse rule.
pub fn explain(
    model: &dyn ActivationModel,
    x: &Prompt,
    params: &ExplainParams,
) -> Result<Explanation> {
    explain_cached(model, x, params, &AttributionCache::new())
}

pub fn explain_cached(
    model: &dyn ActivationModel,
    x: &Prompt,
    params: &ExplainParams,
    cache: &AttributionCache,
) -> Result<Explanation> {
    params.validate(model.vocab_size())?;
    let target = original_output(model, x)?;
    let acceptor = params.acceptor.resolve(target);
    let sample = build_sample(x, params, model.vocab_size())?;
    let candidates =
        generate_predicates_cached(model, x, &sample, params.attributor, params.lambda, cache)?;

    let search_sample = match (params.redraw_for_search, params.neighborhood) {
        (true, NeighborhoodMode::Sampled) => {
            let mut p = params.perturb.clone();
            p.seed = mix(p.seed, 0x5EA2C4);
            NeighborhoodSample::draw(x, &p, model.vocab_size())?
        }
        _ => sample.clone(),
    };

    let baseline_precision = estimate_precision(model, &Rule::new(), &search_sample, &acceptor)?;
    let added = additive_search(model, &candidates, &search_sample, params.tau, &acceptor)?;
    let unpruned_size = added.rule.len();

    let result = if added.reached_tau {
        let priority: Vec<NeuronRef> = candidates.iter().map(|c| c.predicate.neuron).collect();
        let pruned = prune_ordered(
            model,
            &added.rule,
            &priority,
            &search_sample,
            params.tau,
            &acceptor,
        )?;
        let mut trace = added.trace;
        trace.extend(pruned.trace);
        SearchResult {
            rule: pruned.rule,
            precision: pruned.precision,
            reached_tau: true,
            trace,
        }
    } else {
        added
    };
    let origin_accepted = accepted_on_origin(model, &result.rule, x, &acceptor)?;

    Ok(Explanation {
        origin: x.clone(),
        target_token: target,
        params: params.clone(),
        neighborhood_size: sample.len(),
        candidate_count: candidates.len(),
        baseline_precision,
        unpruned_size,
        result,
        origin_accepted,
    })
}
