// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::attribution::{top_contributors, wt_ext, AttributionMap, AttributorKind};
use crate::error::{Result, WasdError};
use crate::model::{ActivationModel, Prompt};
use crate::predicate::Predicate;
use crate::search::Rule;

/// Clamp the `k` top contributors to `activation * coefficient`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub k: usize,
    pub coefficient: f64,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(WasdError::InvalidConfig(
                "baseline k must be at least 1".into(),
            ));
        }
        if !(self.coefficient.is_finite() && self.coefficient > 0.0) {
            return Err(WasdError::InvalidConfig(format!(
                "baseline coefficient must be positive, got {}",
                self.coefficient
            )));
        }
        Ok(())
    }
}

pub fn topk_baseline_rule(
    model: &dyn ActivationModel,
    x: &Prompt,
    kind: AttributorKind,
    cfg: BaselineConfig,
) -> Result<Rule> {
    cfg.validate()?;
    topk_rule_from_map(&wt_ext(model, x, kind)?, cfg)
}

/// [`topk_baseline_rule`] from an already computed attribution map.
pub fn topk_rule_from_map(map: &AttributionMap, cfg: BaselineConfig) -> Result<Rule> {
    cfg.validate()?;
    if cfg.k > map.len() {
        return Err(WasdError::BoundExceeded {
            what: "baseline k (neuron count)",
            bound: map.len(),
        });
    }
    Rule::from_predicates(top_contributors(map, cfg.k).into_iter().map(|r| Predicate {
        neuron: r.neuron,
        value: r.activation * cfg.coefficient,
    }))
}
