// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, WasdError};
use crate::model::{Intervention, Interventions, NeuronRef};
use crate::predicate::Predicate;

/// A conjunction of predicates, at most one per neuron.
///
/// Serialized as `{"predicates": [{"layer", "channel", "pos_from_end", "value"}, ...]}`
/// sorted by neuron order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleRepr", into = "RuleRepr")]
pub struct Rule {
    predicates: BTreeMap<NeuronRef, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleRepr {
    predicates: Vec<Predicate>,
}

impl TryFrom<RuleRepr> for Rule {
    type Error = WasdError;
    fn try_from(repr: RuleRepr) -> Result<Self> {
        Rule::from_predicates(repr.predicates)
    }
}

impl From<Rule> for RuleRepr {
    fn from(rule: Rule) -> Self {
        RuleRepr {
            predicates: rule.predicates(),
        }
    }
}

impl Rule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_predicates<I: IntoIterator<Item = Predicate>>(items: I) -> Result<Self> {
        let mut rule = Self::new();
        for p in items {
            rule.insert(p)?;
        }
        Ok(rule)
    }

    /// Add a predicate; a second predicate on the same neuron is an error.
    pub fn insert(&mut self, p: Predicate) -> Result<()> {
        if !p.value.is_finite() {
            return Err(WasdError::NonFinite {
                neuron: p.neuron,
                value: p.value,
            });
        }
        if self.predicates.contains_key(&p.neuron) {
            return Err(WasdError::ConflictingIntervention(p.neuron));
        }
        self.predicates.insert(p.neuron, p.value);
        Ok(())
    }

    pub fn with(&self, p: Predicate) -> Result<Rule> {
        let mut out = self.clone();
        out.insert(p)?;
        Ok(out)
    }

    pub fn without(&self, neuron: &NeuronRef) -> Rule {
        let mut out = self.clone();
        out.predicates.remove(neuron);
        out
    }

    pub fn contains(&self, neuron: &NeuronRef) -> bool {
        self.predicates.contains_key(neuron)
    }

    pub fn value(&self, neuron: &NeuronRef) -> Option<f64> {
        self.predicates.get(neuron).copied()
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn predicates(&self) -> Vec<Predicate> {
        self.predicates
            .iter()
            .map(|(&neuron, &value)| Predicate { neuron, value })
            .collect()
    }

    pub fn neurons(&self) -> BTreeSet<NeuronRef> {
        self.predicates.keys().copied().collect()
    }

    /// Interventions for a prompt of `len` tokens. Predicates on positions
    /// the prompt does not have are skipped; the skip count is returned.
    pub fn interventions_for(&self, len: usize) -> (Interventions, usize) {
        let mut skipped = 0;
        let items: Vec<Intervention> = self
            .predicates
            .iter()
            .filter(|(n, _)| {
                let keep = n.exists_for(len);
                skipped += usize::from(!keep);
                keep
            })
            .map(|(&target, &value)| Intervention { target, value })
            .collect();
        let iv = Interventions::new(items).expect("rule predicates are finite and unique");
        (iv, skipped)
    }

    /// One line per predicate: `L{layer} C{channel} P-{pos} := {value}`.
    pub fn render(&self) -> String {
        self.predicates().iter().map(|p| format!("{p}\n")).collect()
    }
}
