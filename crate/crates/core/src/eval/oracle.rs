// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exhaustive minimal-rule search, used to check the greedy search on small
//! instances.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WasdError};
use crate::model::ActivationModel;
use crate::perturb::NeighborhoodSample;
use crate::predicate::CandidatePredicate;
use crate::search::{estimate_precision, OutputAcceptor, PrecisionEstimate, Rule};

pub const DEFAULT_ORACLE_BOUND: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Smallest rule reaching `tau`, or `None` when no subset does.
    pub rule: Option<Rule>,
    pub precision: Option<PrecisionEstimate>,
    pub subsets_tested: u64,
}

/// Subsets are visited by size, then lexicographically by candidate index,
/// so the first hit is a minimum-size rule.
pub fn brute_force_minimal_rule(
    model: &dyn ActivationModel,
    candidates: &[CandidatePredicate],
    sample: &NeighborhoodSample,
    tau: f64,
    acceptor: &OutputAcceptor,
    bound: usize,
) -> Result<OracleResult> {
    if candidates.len() > bound {
        return Err(WasdError::BoundExceeded {
            what: "oracle candidate count",
            bound,
        });
    }
    if !sample.exact {
        return Err(WasdError::InvalidConfig(
            "the oracle needs an enumerated neighborhood".into(),
        ));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(WasdError::InvalidConfig(format!(
            "tau must lie in (0, 1], got {tau}"
        )));
    }
    let n = candidates.len();
    let mut tested = 0u64;
    for size in 0..=n {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            // Two candidates on one neuron cannot coexist in a rule.
            match Rule::from_predicates(idx.iter().map(|&i| candidates[i].predicate)) {
                Err(WasdError::ConflictingIntervention(_)) => {}
                Err(e) => return Err(e),
                Ok(rule) => {
                    tested += 1;
                    let est = estimate_precision(model, &rule, sample, acceptor)?;
                    if est.value >= tau {
                        return Ok(OracleResult {
                            rule: Some(rule),
                            precision: Some(est),
                            subsets_tested: tested,
                        });
                    }
                }
            }
            if !next_combination(&mut idx, n) {
                break;
            }
        }
    }
    Ok(OracleResult {
        rule: None,
        precision: None,
        subsets_tested: tested,
    })
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
