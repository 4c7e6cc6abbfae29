// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt neighborhoods and the neutral-prefix protocol.
//!
//! Sampled neighborhoods use independent per-position edits: each
//! unprotected position is edited with probability `per_position_edit_prob`,
//! the edit being a deletion or a replacement (weighted by `delete_weight`
//! and `replace_weight`). Replacements draw uniformly from the pool minus the
//! current token. The last `protect_last_k` tokens are never touched.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WasdError};
use crate::model::{ActivationModel, Interventions, Prompt, TokenId, WordHashTokenizer};
use crate::rng::SplitMix64;

/// Default cap on exhaustively enumerated neighborhoods.
pub const DEFAULT_ENUMERATION_BOUND: usize = 20_000;

const MAX_REDRAWS: usize = 10_000;

/// Neutral prefixes prepended in the instability protocol.
pub const DEFAULT_NEUTRAL_PREFIXES: [&str; 6] = [
    "As we all know, ",
    "Note that, ",
    "In fact, ",
    "Fact: ",
    "Text: ",
    "Input: ",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbParams {
    pub per_position_edit_prob: f64,
    pub delete_weight: f64,
    pub replace_weight: f64,
    pub protect_last_k: usize,
    /// Replacement candidates; `None` means the whole vocabulary.
    pub replacement_pool: Option<Vec<TokenId>>,
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self {
            per_position_edit_prob: 0.3,
            delete_weight: 0.5,
            replace_weight: 0.5,
            protect_last_k: 1,
            replacement_pool: None,
            sample_count: 100,
            seed: 0,
        }
    }
}

impl PerturbParams {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let bad = |m: String| Err(WasdError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.per_position_edit_prob) {
            return bad(format!(
                "per_position_edit_prob {} outside [0, 1]",
                self.per_position_edit_prob
            ));
        }
        let weights_ok = |w: f64| w.is_finite() && w >= 0.0;
        if !weights_ok(self.delete_weight) || !weights_ok(self.replace_weight) {
            return bad("edit weights must be finite and non-negative".into());
        }
        if self.delete_weight + self.replace_weight <= 0.0 {
            return bad("delete_weight and replace_weight cannot both be zero".into());
        }
        if self.sample_count == 0 {
            return bad("sample_count must be at least 1".into());
        }
        if let Some(pool) = &self.replacement_pool {
            if let Some(t) = pool.iter().find(|t| t.index() >= vocab_size) {
                return bad(format!("replacement token {t} outside vocabulary"));
            }
        }
        Ok(())
    }

    fn pool(&self, vocab_size: usize) -> Vec<TokenId> {
        let mut pool = match &self.replacement_pool {
            Some(p) => p.clone(),
            None => (0..vocab_size as u32).map(TokenId).collect(),
        };
        pool.sort_unstable();
        pool.dedup();
        pool
    }

    fn check_prompt(&self, x: &Prompt) -> Result<()> {
        if x.len() <= self.protect_last_k {
            return Err(WasdError::PromptTooShort {
                len: x.len(),
                protect: self.protect_last_k,
            });
        }
        Ok(())
    }
}

/// A frozen list of neighbor prompts around `origin`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodSample {
    pub origin: Prompt,
    pub prompts: Vec<Prompt>,
    /// True when `prompts` is the full enumerated neighborhood (minus the
    /// origin), so precision over it is exact rather than estimated.
    pub exact: bool,
}

impl NeighborhoodSample {
    /// Independent random draws; see [`gen_neighborhood`].
    pub fn draw(x: &Prompt, params: &PerturbParams, vocab_size: usize) -> Result<Self> {
        gen_neighborhood(x, params, vocab_size)
    }

    /// Every prompt within `max_edits` edits of `x`, excluding `x` itself.
    pub fn exhaustive(
        x: &Prompt,
        max_edits: usize,
        params: &PerturbParams,
        vocab_size: usize,
    ) -> Result<Self> {
        let prompts: Vec<Prompt> =
            enumerate_neighborhood(x, max_edits, params, vocab_size, DEFAULT_ENUMERATION_BOUND)?
                .into_iter()
                .filter(|p| p != x)
                .collect();
        if prompts.is_empty() {
            return Err(WasdError::EmptyNeighborhood);
        }
        Ok(Self {
            origin: x.clone(),
            prompts,
            exact: true,
        })
    }

    /// `n` uniform draws with replacement from this sample's prompts.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Self> {
        if self.prompts.is_empty() {
            return Err(WasdError::EmptyNeighborhood);
        }
        let mut rng = SplitMix64::new(seed);
        let prompts = (0..n)
            .map(|_| self.prompts[rng.below(self.prompts.len() as u64) as usize].clone())
            .collect();
        Ok(Self {
            origin: self.origin.clone(),
            prompts,
            exact: false,
        })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

/// Draw `sample_count` neighbors of `x`. Draws that delete every token are
/// redrawn.
pub fn gen_neighborhood(
    x: &Prompt,
    params: &PerturbParams,
    vocab_size: usize,
) -> Result<NeighborhoodSample> {
    params.validate(vocab_size)?;
    params.check_prompt(x)?;
    let pool = params.pool(vocab_size);
    let editable = x.len() - params.protect_last_k;
    let delete_share = params.delete_weight / (params.delete_weight + params.replace_weight);
    let mut rng = SplitMix64::new(params.seed);

    let mut prompts = Vec::with_capacity(params.sample_count);
    for _ in 0..params.sample_count {
        let mut redraws = 0;
        let tokens = loop {
            // Walk from the last token back so a prompt and a prefixed copy
            // of it get identical edits on their shared tokens.
            let mut out = Vec::with_capacity(x.len());
            for (i, &tok) in x.tokens().iter().enumerate().rev() {
                if i >= editable || rng.next_f64() >= params.per_position_edit_prob {
                    out.push(tok);
                } else if rng.next_f64() < delete_share {
                    // deleted
                } else {
                    let alternatives: Vec<TokenId> =
                        pool.iter().copied().filter(|&t| t != tok).collect();
                    if alternatives.is_empty() {
                        out.push(tok);
                    } else {
                        out.push(alternatives[rng.below(alternatives.len() as u64) as usize]);
                    }
                }
            }
            if !out.is_empty() {
                out.reverse();
                break out;
            }
            redraws += 1;
            if redraws >= MAX_REDRAWS {
                return Err(WasdError::InvalidConfig(
                    "perturbation deletes every token; protect at least one token".into(),
                ));
            }
        };
        prompts.push(Prompt::new(tokens)?);
    }
    Ok(NeighborhoodSample {
        origin: x.clone(),
        prompts,
        exact: false,
    })
}

/// All distinct prompts reachable from `x` by at most `max_edits`
/// single-position edits (including `x`), sorted.
pub fn enumerate_neighborhood(
    x: &Prompt,
    max_edits: usize,
    params: &PerturbParams,
    vocab_size: usize,
    bound: usize,
) -> Result<Vec<Prompt>> {
    params.validate(vocab_size)?;
    params.check_prompt(x)?;
    let pool = params.pool(vocab_size);
    let editable = x.len() - params.protect_last_k;
    let allow_delete = params.delete_weight > 0.0;
    let allow_replace = params.replace_weight > 0.0;

    struct Walk<'a> {
        source: &'a [TokenId],
        editable: usize,
        pool: &'a [TokenId],
        allow_delete: bool,
        allow_replace: bool,
        bound: usize,
        seen: BTreeSet<Vec<TokenId>>,
    }

    impl Walk<'_> {
        fn visit(
            &mut self,
            pos: usize,
            edits_left: usize,
            current: &mut Vec<TokenId>,
        ) -> Result<()> {
            if pos == self.source.len() {
                if !current.is_empty()
                    && self.seen.insert(current.clone())
                    && self.seen.len() > self.bound
                {
                    return Err(WasdError::BoundExceeded {
                        what: "neighbor prompts",
                        bound: self.bound,
                    });
                }
                return Ok(());
            }
            let tok = self.source[pos];
            current.push(tok);
            self.visit(pos + 1, edits_left, current)?;
            current.pop();
            if pos < self.editable && edits_left > 0 {
                if self.allow_delete {
                    self.visit(pos + 1, edits_left - 1, current)?;
                }
                if self.allow_replace {
                    for &alt in self.pool.iter().filter(|&&t| t != tok) {
                        current.push(alt);
                        self.visit(pos + 1, edits_left - 1, current)?;
                        current.pop();
                    }
                }
            }
            Ok(())
        }
    }

    let mut walk = Walk {
        source: x.tokens(),
        editable,
        pool: &pool,
        allow_delete,
        allow_replace,
        bound,
        seen: BTreeSet::new(),
    };
    walk.visit(0, max_edits, &mut Vec::with_capacity(x.len()))?;
    walk.seen.into_iter().map(Prompt::new).collect()
}

/// Ordered list of neutral prefixes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeutralPrefixSet {
    pub prefixes: Vec<Vec<TokenId>>,
}

impl NeutralPrefixSet {
    pub fn new(prefixes: Vec<Vec<TokenId>>) -> Result<Self> {
        if prefixes.is_empty() || prefixes.iter().any(Vec::is_empty) {
            return Err(WasdError::InvalidConfig(
                "neutral prefixes must be non-empty".into(),
            ));
        }
        Ok(Self { prefixes })
    }

    /// The six default prefixes, tokenized with [`WordHashTokenizer`].
    pub fn default_for(vocab_size: usize) -> Self {
        let tok = WordHashTokenizer::new(vocab_size);
        Self {
            prefixes: DEFAULT_NEUTRAL_PREFIXES
                .iter()
                .map(|p| tok.encode(p))
                .collect(),
        }
    }

    /// One prefix per non-blank line.
    pub fn from_text(text: &str, vocab_size: usize) -> Result<Self> {
        let tok = WordHashTokenizer::new(vocab_size);
        Self::new(
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| tok.encode(l))
                .collect(),
        )
    }

    pub fn from_file(path: &Path, vocab_size: usize) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, vocab_size)
    }
}

/// A prompt with a neutral prefix prepended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixedPrompt {
    pub prompt: Prompt,
    pub prefix_index: usize,
}

/// Try prefixes in a seeded random order and return the first prefixed
/// prompt whose output matches `f(x)`. Prefixes that overflow the context
/// are skipped.
pub fn neutral_prefix_perturb(
    model: &dyn ActivationModel,
    x: &Prompt,
    prefixes: &NeutralPrefixSet,
    seed: u64,
) -> Result<PrefixedPrompt> {
    let none = Interventions::none();
    let original = model.next_token(x, &none)?;
    let mut order: Vec<usize> = (0..prefixes.prefixes.len()).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    for &i in &order {
        let candidate = x.prepend(&prefixes.prefixes[i]);
        if candidate.len() > model.max_context() {
            continue;
        }
        if model.next_token(&candidate, &none)? == original {
            return Ok(PrefixedPrompt {
                prompt: candidate,
                prefix_index: i,
            });
        }
    }
    Err(WasdError::NoNeutralPrefix { tried: order.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x4() -> Prompt {
        Prompt::from_ids([3, 1, 4, 1]).unwrap()
    }

    #[test]
    fn zero_probability_keeps_prompt() {
        let params = PerturbParams {
            per_position_edit_prob: 0.0,
            sample_count: 20,
            ..Default::default()
        };
        let s = gen_neighborhood(&x4(), &params, 8).unwrap();
        assert_eq!(s.len(), 20);
        assert!(s.prompts.iter().all(|p| *p == x4()));
    }

    #[test]
    fn delete_everything_unprotected() {
        let params = PerturbParams {
            per_position_edit_prob: 1.0,
            delete_weight: 1.0,
            replace_weight: 0.0,
            protect_last_k: 1,
            sample_count: 10,
            ..Default::default()
        };
        let s = gen_neighborhood(&x4(), &params, 8).unwrap();
        assert!(s.prompts.iter().all(|p| p.tokens() == [TokenId(1)]));
    }

    #[test]
    fn deterministic_for_seed() {
        let params = PerturbParams {
            seed: 99,
            sample_count: 50,
            ..Default::default()
        };
        let a = gen_neighborhood(&x4(), &params, 16).unwrap();
        let b = gen_neighborhood(&x4(), &params, 16).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = gen_neighborhood(
            &x4(),
            &PerturbParams {
                seed: 100,
                ..params
            },
            16,
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_short_and_bad_params() {
        let one = Prompt::from_ids([2]).unwrap();
        assert!(matches!(
            gen_neighborhood(&one, &PerturbParams::default(), 8),
            Err(WasdError::PromptTooShort { .. })
        ));
        let both_zero = PerturbParams {
            delete_weight: 0.0,
            replace_weight: 0.0,
            ..Default::default()
        };
        assert!(gen_neighborhood(&x4(), &both_zero, 8).is_err());
        let all_gone = PerturbParams {
            per_position_edit_prob: 1.0,
            replace_weight: 0.0,
            protect_last_k: 0,
            ..Default::default()
        };
        assert!(gen_neighborhood(&x4(), &all_gone, 8).is_err());
    }

    #[test]
    fn enumeration_counts() {
        let x = Prompt::from_ids([0, 1]).unwrap();
        let params = PerturbParams {
            replacement_pool: Some(vec![TokenId(0), TokenId(1), TokenId(2)]),
            ..Default::default()
        };
        assert_eq!(
            enumerate_neighborhood(&x, 0, &params, 3, 100).unwrap(),
            vec![x.clone()]
        );
        // {x} + {delete pos 0} + 2 replacements at pos 0.
        let all = enumerate_neighborhood(&x, 1, &params, 3, 100).unwrap();
        assert_eq!(all.len(), 4);
        assert!(all.contains(&Prompt::from_ids([1]).unwrap()));
        assert!(all.contains(&Prompt::from_ids([2, 1]).unwrap()));
        assert!(matches!(
            enumerate_neighborhood(&x, 1, &params, 3, 3),
            Err(WasdError::BoundExceeded { .. })
        ));
    }

    #[test]
    fn exhaustive_excludes_origin_and_subsample() {
        let x = Prompt::from_ids([0, 1]).unwrap();
        let params = PerturbParams {
            replacement_pool: Some(vec![TokenId(0), TokenId(1), TokenId(2)]),
            ..Default::default()
        };
        let s = NeighborhoodSample::exhaustive(&x, 1, &params, 3).unwrap();
        assert!(s.exact);
        assert_eq!(s.len(), 3);
        assert!(!s.prompts.contains(&x));
        let sub = s.subsample(25, 4).unwrap();
        assert!(!sub.exact);
        assert_eq!(sub.len(), 25);
        assert!(sub.prompts.iter().all(|p| s.prompts.contains(p)));
    }

    #[test]
    fn default_prefixes_tokenize() {
        let set = NeutralPrefixSet::default_for(64);
        let lens: Vec<usize> = set.prefixes.iter().map(Vec::len).collect();
        assert_eq!(lens, vec![4, 2, 2, 1, 1, 1]);
        let from_text = NeutralPrefixSet::from_text("Fact: \n\nNote that, \n", 64).unwrap();
        assert_eq!(
            from_text.prefixes,
            vec![set.prefixes[3].clone(), set.prefixes[1].clone()]
        );
        assert!(NeutralPrefixSet::from_text("\n \n", 64).is_err());
    }
}
