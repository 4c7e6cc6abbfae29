// SPDX-License-Identifier: MIT OR Apache-2.0

//! Precision of a rule over a neighborhood sample.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Rule;
use crate::error::{Result, WasdError};
use crate::model::{ActivationModel, Prompt, TokenId};
use crate::perturb::NeighborhoodSample;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Estimated (or exact) probability that the intervened output is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionEstimate {
    pub value: f64,
    pub hits: usize,
    pub trials: usize,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub exact: bool,
}

impl PrecisionEstimate {
    pub fn new(hits: usize, trials: usize, exact: bool) -> Self {
        assert!(
            trials > 0 && hits <= trials,
            "invalid counts {hits}/{trials}"
        );
        let value = hits as f64 / trials as f64;
        let (ci95_low, ci95_high) = if exact {
            (value, value)
        } else {
            wilson_interval(hits, trials, Z95)
        };
        Self {
            value,
            hits,
            trials,
            ci95_low,
            ci95_high,
            exact,
        }
    }
}

/// Wilson score interval, clamped so that it always brackets `hits/trials`.
pub fn wilson_interval(hits: usize, trials: usize, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    (
        (centre - half).max(0.0).min(p),
        (centre + half).min(1.0).max(p),
    )
}

/// Serializable choice of target behavior.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AcceptorSpec {
    /// Accept exactly the original output `f(x)`.
    #[default]
    OutputEquality,
    /// Accept any token in a fixed set.
    TokenSet { tokens: Vec<TokenId> },
}

impl AcceptorSpec {
    pub fn resolve(&self, original: TokenId) -> OutputAcceptor {
        match self {
            AcceptorSpec::OutputEquality => OutputAcceptor::single(original),
            AcceptorSpec::TokenSet { tokens } => OutputAcceptor {
                accepted: tokens.iter().copied().collect(),
            },
        }
    }
}

/// Pure predicate over output tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputAcceptor {
    accepted: BTreeSet<TokenId>,
}

impl OutputAcceptor {
    pub fn single(token: TokenId) -> Self {
        Self {
            accepted: [token].into_iter().collect(),
        }
    }

    pub fn accepts(&self, token: TokenId) -> bool {
        self.accepted.contains(&token)
    }
}

/// Precision plus the number of predicate applications skipped because a
/// neighbor was too short to hold the predicate's position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionDetail {
    pub estimate: PrecisionEstimate,
    pub vacuous_skips: usize,
}

/// Fraction of sample prompts whose output under `do(rule)` is accepted.
pub fn estimate_precision(
    model: &dyn ActivationModel,
    rule: &Rule,
    sample: &NeighborhoodSample,
    acceptor: &OutputAcceptor,
) -> Result<PrecisionEstimate> {
    Ok(precision_detail(model, rule, sample, acceptor)?.estimate)
}

pub fn precision_detail(
    model: &dyn ActivationModel,
    rule: &Rule,
    sample: &NeighborhoodSample,
    acceptor: &OutputAcceptor,
) -> Result<PrecisionDetail> {
    if sample.is_empty() {
        return Err(WasdError::EmptyNeighborhood);
    }
    // Duplicate neighbors share one forward pass.
    let mut counts: BTreeMap<&Prompt, usize> = BTreeMap::new();
    for p in &sample.prompts {
        *counts.entry(p).or_default() += 1;
    }
    let distinct: Vec<(&Prompt, usize)> = counts.into_iter().collect();
    let (hits, skips) = distinct
        .par_iter()
        .map(|&(p, mult)| {
            let (iv, skipped) = rule.interventions_for(p.len());
            let hit = acceptor.accepts(model.next_token(p, &iv)?);
            Ok((usize::from(hit) * mult, skipped * mult))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((0, 0), |(h, s), (dh, ds)| (h + dh, s + ds));
    Ok(PrecisionDetail {
        estimate: PrecisionEstimate::new(hits, sample.len(), sample.exact),
        vacuous_skips: skips,
    })
}

/// Whether the acceptor holds on the origin prompt itself under `do(rule)`.
pub fn accepted_on_origin(
    model: &dyn ActivationModel,
    rule: &Rule,
    x: &Prompt,
    acceptor: &OutputAcceptor,
) -> Result<bool> {
    let (iv, _) = rule.interventions_for(x.len());
    Ok(acceptor.accepts(model.next_token(x, &iv)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference_values() {
        // 7/10 at z = 1.96: reference values from an independent evaluation of the closed form.
        let (lo, hi) = wilson_interval(7, 10, Z95);
        assert!((lo - 0.396_778).abs() < 1e-5, "{lo}");
        assert!((hi - 0.892_208).abs() < 1e-5, "{hi}");
        let (lo, hi) = wilson_interval(0, 20, Z95);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.161_125).abs() < 1e-5, "{hi}");
        let (lo, hi) = wilson_interval(20, 20, Z95);
        assert_eq!(hi, 1.0);
        assert!((lo - 0.838_875).abs() < 1e-5, "{lo}");
    }

    #[test]
    fn exact_has_degenerate_interval() {
        let e = PrecisionEstimate::new(3, 4, true);
        assert_eq!((e.value, e.ci95_low, e.ci95_high), (0.75, 0.75, 0.75));
        let m = PrecisionEstimate::new(3, 4, false);
        assert!(m.ci95_low <= m.value && m.value <= m.ci95_high);
    }

    #[test]
    fn acceptors() {
        let eq = AcceptorSpec::OutputEquality.resolve(TokenId(4));
        assert!(eq.accepts(TokenId(4)) && !eq.accepts(TokenId(5)));
        let set = AcceptorSpec::TokenSet {
            tokens: vec![TokenId(1), TokenId(2)],
        }
        .resolve(TokenId(4));
        assert!(set.accepts(TokenId(2)) && !set.accepts(TokenId(4)));
        let json = serde_json::to_string(&AcceptorSpec::default()).unwrap();
        assert_eq!(json, r#"{"kind":"output_equality"}"#);
    }
}
