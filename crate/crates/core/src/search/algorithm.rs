// SPDX-License-Identifier: MIT OR Apache-2.0

//! Contribution-ordered additive search followed by a single pruning pass.

use serde::{Deserialize, Serialize};

use super::precision::{precision_detail, OutputAcceptor, PrecisionEstimate};
use super::Rule;
use crate::error::{Result, WasdError};
use crate::model::{ActivationModel, NeuronRef};
use crate::perturb::NeighborhoodSample;
use crate::predicate::{sort_candidates, CandidatePredicate, Predicate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Add,
    Prune,
}

/// One tested predicate. For `Add`, `accepted` means the predicate joined
/// the rule; for `Prune`, that it was removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub phase: Phase,
    pub predicate: Predicate,
    pub accepted: bool,
    pub precision_before: f64,
    pub precision_after: f64,
    pub vacuous_skips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub rule: Rule,
    pub precision: PrecisionEstimate,
    pub reached_tau: bool,
    pub trace: Vec<TraceStep>,
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(WasdError::InvalidConfig(format!(
            "tau must lie in (0, 1], got {tau}"
        )));
    }
    Ok(())
}

/// Greedy additive search.
///
/// Starting from the empty rule, each candidate (in descending contribution
/// order) is kept only if it strictly raises precision. The search stops as
/// soon as precision reaches `tau`. If the candidates run out first, the
/// best rule found is returned with `reached_tau == false`.
pub fn additive_search(
    model: &dyn ActivationModel,
    candidates: &[CandidatePredicate],
    sample: &NeighborhoodSample,
    tau: f64,
    acceptor: &OutputAcceptor,
) -> Result<SearchResult> {
    check_tau(tau)?;
    let mut ordered = candidates.to_vec();
    sort_candidates(&mut ordered);

    let mut rule = Rule::new();
    let mut current = precision_detail(model, &rule, sample, acceptor)?.estimate;
    let mut trace = Vec::new();
    if current.value >= tau {
        return Ok(SearchResult {
            rule,
            precision: current,
            reached_tau: true,
            trace,
        });
    }

    let mut reached_tau = false;
    for cand in &ordered {
        if rule.contains(&cand.predicate.neuron) {
            continue;
        }
        let tentative = rule.with(cand.predicate)?;
        let detail = precision_detail(model, &tentative, sample, acceptor)?;
        let accepted = detail.estimate.value > current.value;
        trace.push(TraceStep {
            phase: Phase::Add,
            predicate: cand.predicate,
            accepted,
            precision_before: current.value,
            precision_after: detail.estimate.value,
            vacuous_skips: detail.vacuous_skips,
        });
        if accepted {
            rule = tentative;
            current = detail.estimate;
        }
        if current.value >= tau {
            reached_tau = true;
            break;
        }
    }
    Ok(SearchResult {
        rule,
        precision: current,
        reached_tau,
        trace,
    })
}

/// Outcome of [`prune_ordered`].
#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub rule: Rule,
    pub precision: PrecisionEstimate,
    /// Whether the input rule met `tau` before pruning.
    pub input_met_tau: bool,
    pub trace: Vec<TraceStep>,
}

/// Single pruning pass in neuron order. [`explain`](super::explain) uses
/// [`prune_ordered`] with the candidates' contribution order instead.
pub fn prune(
    model: &dyn ActivationModel,
    rule: &Rule,
    sample: &NeighborhoodSample,
    tau: f64,
    acceptor: &OutputAcceptor,
) -> Result<Rule> {
    Ok(prune_ordered(model, rule, &[], sample, tau, acceptor)?.rule)
}

/// Single pruning pass. Predicates are visited in the order their neurons
/// appear in `priority` (then neuron order for any not listed); each is
/// dropped immediately if the remaining rule still reaches `tau`.
pub fn prune_ordered(
    model: &dyn ActivationModel,
    rule: &Rule,
    priority: &[NeuronRef],
    sample: &NeighborhoodSample,
    tau: f64,
    acceptor: &OutputAcceptor,
) -> Result<PruneOutcome> {
    check_tau(tau)?;
    let mut order: Vec<Predicate> = rule.predicates();
    order.sort_by_key(|p| {
        let rank = priority
            .iter()
            .position(|n| *n == p.neuron)
            .unwrap_or(usize::MAX);
        (rank, p.neuron)
    });

    let mut current_rule = rule.clone();
    let mut current = precision_detail(model, &current_rule, sample, acceptor)?.estimate;
    let input_met_tau = current.value >= tau;
    let mut trace = Vec::with_capacity(order.len());
    for p in order {
        let reduced = current_rule.without(&p.neuron);
        let detail = precision_detail(model, &reduced, sample, acceptor)?;
        let removed = detail.estimate.value >= tau;
        trace.push(TraceStep {
            phase: Phase::Prune,
            predicate: p,
            accepted: removed,
            precision_before: current.value,
            precision_after: detail.estimate.value,
            vacuous_skips: detail.vacuous_skips,
        });
        if removed {
            current_rule = reduced;
            current = detail.estimate;
        }
    }
    Ok(PruneOutcome {
        rule: current_rule,
        precision: current,
        input_met_tau,
        trace,
    })
}
