// SPDX-License-Identifier: MIT OR Apache-2.0

//! Weight extraction: per-neuron activation and contribution to the logit
//! of a target token.
//!
//! Two strategies are available:
//!
//! - [`AttributorKind::Ablation`]: `contribution(v) = logit_t(x) - logit_t(x | do(v = 0))`,
//!   one extra forward pass per neuron with a nonzero activation (zeroing a
//!   neuron that is already zero is a no-op, so its contribution is exactly 0).
//! - [`AttributorKind::PlantedExact`]: ground truth read from a
//!   [`PlantedModel`](crate::model::PlantedModel). A planted neuron whose
//!   activation is at least `threshold - 0.25` scores `1 + (activation - threshold)`;
//!   every other neuron scores 0.
//!
//! The target token defaults to the unintervened output `f(x)`; predicate
//! generation passes the original prompt's output so that every neighbor is
//! attributed against the same token.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WasdError};
use crate::model::{argmax, ActivationModel, Interventions, NeuronRef, Prompt, TokenId};

/// Activation window below the threshold inside which planted neurons
/// still receive credit.
pub const PLANTED_MARGIN: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributorKind {
    Ablation,
    PlantedExact,
}

/// Activation and logit contribution of one neuron on one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    #[serde(flatten)]
    pub neuron: NeuronRef,
    pub activation: f64,
    pub contribution: f64,
}

pub type AttributionMap = BTreeMap<NeuronRef, AttributionRecord>;

/// Knobs for [`wt_ext_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ExtractOptions {
    /// Token whose logit is attributed; `None` means `f(x)`.
    pub target: Option<TokenId>,
    /// Only ablate the `n` neurons with the largest activations (others get
    /// contribution 0). Off by default.
    pub top_activations: Option<usize>,
}

/// Weight extraction against the model's own output on `x`.
pub fn wt_ext(
    model: &dyn ActivationModel,
    x: &Prompt,
    kind: AttributorKind,
) -> Result<AttributionMap> {
    wt_ext_with(model, x, kind, ExtractOptions::default())
}

pub fn wt_ext_with(
    model: &dyn ActivationModel,
    x: &Prompt,
    kind: AttributorKind,
    opts: ExtractOptions,
) -> Result<AttributionMap> {
    let base = model.forward(x, &Interventions::none())?;
    match kind {
        AttributorKind::PlantedExact => {
            let planted = model.as_planted().ok_or_else(|| {
                WasdError::UnsupportedAttributor("planted_exact requires a planted model".into())
            })?;
            Ok(base
                .activations
                .iter()
                .map(|(&neuron, &activation)| {
                    let contribution = match planted.threshold(&neuron) {
                        Some(t) if activation >= t - PLANTED_MARGIN => 1.0 + (activation - t),
                        _ => 0.0,
                    };
                    (
                        neuron,
                        AttributionRecord {
                            neuron,
                            activation,
                            contribution,
                        },
                    )
                })
                .collect())
        }
        AttributorKind::Ablation => {
            let target = opts.target.unwrap_or(base.next_token);
            if target.index() >= base.logits.len() {
                return Err(WasdError::InvalidPrompt(format!(
                    "target token {target} outside vocabulary"
                )));
            }
            let base_logit = base.logits[target.index()];
            let eligible = eligible_neurons(&base.activations, opts.top_activations);
            let records: Vec<AttributionRecord> = base
                .activations
                .par_iter()
                .map(|(&neuron, &activation)| {
                    let contribution = if activation == 0.0 || !eligible(&neuron) {
                        0.0
                    } else {
                        let logits = model.logits(x, &Interventions::single(neuron, 0.0)?)?;
                        base_logit - logits[target.index()]
                    };
                    Ok(AttributionRecord {
                        neuron,
                        activation,
                        contribution,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(records.into_iter().map(|r| (r.neuron, r)).collect())
        }
    }
}

fn eligible_neurons(
    activations: &BTreeMap<NeuronRef, f64>,
    top: Option<usize>,
) -> impl Fn(&NeuronRef) -> bool + Sync {
    let keep = top.map(|n| {
        let mut ranked: Vec<(&NeuronRef, &f64)> = activations.iter().collect();
        ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(b.0)));
        ranked
            .into_iter()
            .take(n)
            .map(|(k, _)| *k)
            .collect::<std::collections::BTreeSet<_>>()
    });
    move |n| keep.as_ref().is_none_or(|k| k.contains(n))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    model: u64,
    prompt: Prompt,
    kind: AttributorKind,
    opts: ExtractOptions,
}

/// Memo of weight extractions keyed on `(model identity, prompt, kind, options)`.
#[derive(Debug)]
pub struct AttributionCache {
    enabled: bool,
    entries: Mutex<HashMap<CacheKey, Arc<AttributionMap>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl Default for AttributionCache {
    fn default() -> Self {
        Self::new()
    }
}

impl AttributionCache {
    pub fn new() -> Self {
        Self {
            enabled: true,
            entries: Mutex::default(),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    /// A cache that never stores anything.
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::new()
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn cached_wt_ext(
    model: &dyn ActivationModel,
    x: &Prompt,
    kind: AttributorKind,
    cache: &AttributionCache,
) -> Result<Arc<AttributionMap>> {
    cached_wt_ext_with(model, x, kind, ExtractOptions::default(), cache)
}

pub fn cached_wt_ext_with(
    model: &dyn ActivationModel,
    x: &Prompt,
    kind: AttributorKind,
    opts: ExtractOptions,
    cache: &AttributionCache,
) -> Result<Arc<AttributionMap>> {
    if !cache.enabled {
        return Ok(Arc::new(wt_ext_with(model, x, kind, opts)?));
    }
    let key = CacheKey {
        model: model.identity(),
        prompt: x.clone(),
        kind,
        opts,
    };
    if let Some(hit) = cache.entries.lock().expect("cache poisoned").get(&key) {
        cache.hits.fetch_add(1, Ordering::Relaxed);
        return Ok(Arc::clone(hit));
    }
    cache.misses.fetch_add(1, Ordering::Relaxed);
    let map = Arc::new(wt_ext_with(model, x, kind, opts)?);
    cache
        .entries
        .lock()
        .expect("cache poisoned")
        .insert(key, Arc::clone(&map));
    Ok(map)
}

/// The `k` highest-contribution records, ties broken by neuron order.
pub fn top_contributors(map: &AttributionMap, k: usize) -> Vec<AttributionRecord> {
    let mut records: Vec<AttributionRecord> = map.values().copied().collect();
    records.sort_by(|a, b| {
        b.contribution
            .total_cmp(&a.contribution)
            .then(a.neuron.cmp(&b.neuron))
    });
    records.truncate(k);
    records
}

/// Output token of the unintervened model.
pub fn original_output(model: &dyn ActivationModel, x: &Prompt) -> Result<TokenId> {
    Ok(argmax(&model.logits(x, &Interventions::none())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        PlantedModel, PlantedModelSpec, PlantedNeuron, ToyTransformer, ToyTransformerConfig,
    };

    fn toy() -> ToyTransformer {
        ToyTransformer::new(ToyTransformerConfig::with_seed(42)).unwrap()
    }

    fn planted() -> PlantedModel {
        PlantedModel::new(PlantedModelSpec {
            vocab_size: 8,
            neuron_count: 6,
            planted: vec![
                PlantedNeuron {
                    neuron: 1,
                    threshold: 0.3,
                },
                PlantedNeuron {
                    neuron: 4,
                    threshold: 0.6,
                },
            ],
            target_token: TokenId(2),
            seed: 11,
            max_context: 32,
        })
        .unwrap()
    }

    #[test]
    fn ablation_covers_grid_and_matches_forward() {
        let m = toy();
        let x = Prompt::from_ids([5, 17, 33, 2]).unwrap();
        let map = wt_ext(&m, &x, AttributorKind::Ablation).unwrap();
        let grid = m.enumerate_neurons(4).unwrap();
        assert_eq!(map.keys().copied().collect::<Vec<_>>(), grid);
        let out = m.forward(&x, &Interventions::none()).unwrap();
        for (n, rec) in &map {
            assert_eq!(rec.activation, out.activations[n]);
            assert!(rec.activation.is_finite() && rec.contribution.is_finite());
            if rec.activation == 0.0 {
                assert_eq!(rec.contribution, 0.0);
            }
        }
        // 256 ablation passes on a generic seed move the output logit.
        let total: f64 = map.values().map(|r| r.contribution.abs()).sum();
        assert!(total > 0.0);
    }

    #[test]
    fn ablation_to_natural_value_is_neutral() {
        let m = toy();
        let x = Prompt::from_ids([1, 2, 3]).unwrap();
        let out = m.forward(&x, &Interventions::none()).unwrap();
        for (&n, &a) in out.activations.iter().take(40) {
            let logits = m.logits(&x, &Interventions::single(n, a).unwrap()).unwrap();
            assert_eq!(logits, out.logits);
        }
    }

    #[test]
    fn planted_exact_scores() {
        let m = planted();
        let x = Prompt::from_ids([1, 2, 3]).unwrap();
        let map = wt_ext(&m, &x, AttributorKind::PlantedExact).unwrap();
        assert_eq!(map.len(), 6);
        for (n, rec) in &map {
            match m.threshold(n) {
                None => assert_eq!(rec.contribution, 0.0),
                Some(t) if rec.activation >= t - PLANTED_MARGIN => {
                    assert_eq!(rec.contribution, 1.0 + rec.activation - t)
                }
                Some(_) => assert_eq!(rec.contribution, 0.0),
            }
        }
    }

    #[test]
    fn planted_exact_rejects_other_models() {
        let x = Prompt::from_ids([1]).unwrap();
        assert!(matches!(
            wt_ext(&toy(), &x, AttributorKind::PlantedExact),
            Err(WasdError::UnsupportedAttributor(_))
        ));
    }

    #[test]
    fn top_activation_filter_limits_ablation() {
        let m = toy();
        let x = Prompt::from_ids([4, 9, 12]).unwrap();
        let opts = ExtractOptions {
            target: None,
            top_activations: Some(5),
        };
        let map = wt_ext_with(&m, &x, AttributorKind::Ablation, opts).unwrap();
        assert!(map.values().filter(|r| r.contribution != 0.0).count() <= 5);
    }

    #[test]
    fn cache_hits_and_misses() {
        let m = toy();
        let cache = AttributionCache::new();
        let x = Prompt::from_ids([1, 2, 3]).unwrap();
        let y = Prompt::from_ids([1, 2, 4]).unwrap();
        let a = cached_wt_ext(&m, &x, AttributorKind::Ablation, &cache).unwrap();
        let b = cached_wt_ext(&m, &x, AttributorKind::Ablation, &cache).unwrap();
        assert_eq!(a, b);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));
        cached_wt_ext(&m, &y, AttributorKind::Ablation, &cache).unwrap();
        assert_eq!(cache.misses(), 2);

        let off = AttributionCache::disabled();
        let c = cached_wt_ext(&m, &x, AttributorKind::Ablation, &off).unwrap();
        assert_eq!(*c, wt_ext(&m, &x, AttributorKind::Ablation).unwrap());
        assert!(off.is_empty());
    }

    #[test]
    fn records_serialize_flat() {
        let rec = AttributionRecord {
            neuron: NeuronRef::new(1, 2, 3),
            activation: 0.5,
            contribution: -0.25,
        };
        let json = serde_json::to_value(rec).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"layer": 1, "channel": 2, "pos_from_end": 3, "activation": 0.5, "contribution": -0.25})
        );
    }
}
