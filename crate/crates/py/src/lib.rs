// SPDX-License-Identifier: MIT OR Apache-2.0

//! Python bindings. Structured results cross the boundary as JSON strings;
//! prompts and token lists are plain `list[int]`.

use std::collections::BTreeSet;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use wasd_core::attribution::{wt_ext, AttributorKind};
use wasd_core::eval::{
    generate_planted_suite, jaccard_instability as jaccard, topk_baseline_rule, BaselineConfig,
    PlantedSuiteParams,
};
use wasd_core::model::{
    ActivationModel, Interventions, Model as CoreModel, ModelSpec, NeuronRef, Prompt, TokenId,
    ToyTransformerConfig,
};
use wasd_core::search::{explain, intervened_generate, ExplainParams, Rule as CoreRule};
use wasd_core::WasdError;

fn err(e: WasdError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: DeserializeOwned>(what: &str, json: &str) -> PyResult<T> {
    serde_json::from_str(json)
        .map_err(|e| PyValueError::new_err(format!("invalid {what} JSON: {e}")))
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn prompt(ids: Vec<u32>) -> PyResult<Prompt> {
    Prompt::from_ids(ids).map_err(err)
}

fn attributor(kind: &str) -> PyResult<AttributorKind> {
    match kind {
        "ablation" => Ok(AttributorKind::Ablation),
        "planted_exact" => Ok(AttributorKind::PlantedExact),
        other => Err(PyValueError::new_err(format!(
            "unknown attributor {other:?}"
        ))),
    }
}

/// `(layer, channel, pos_from_end, activation, contribution)`.
type AttributionRow = (u32, u32, u32, f64, f64);

/// A set of neuron clamps.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct Rule {
    inner: CoreRule,
}

#[pymethods]
impl Rule {
    #[new]
    #[pyo3(signature = (predicates = Vec::new()))]
    fn new(predicates: Vec<(u32, u32, u32, f64)>) -> PyResult<Self> {
        let inner = CoreRule::from_predicates(predicates.into_iter().map(|(l, c, p, value)| {
            wasd_core::predicate::Predicate {
                neuron: NeuronRef::new(l, c, p),
                value,
            }
        }))
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(Self {
            inner: parse("rule", json)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.inner)
    }

    /// `(layer, channel, pos_from_end, value)` tuples in neuron order.
    fn predicates(&self) -> Vec<(u32, u32, u32, f64)> {
        self.inner
            .predicates()
            .iter()
            .map(|p| {
                (
                    p.neuron.layer,
                    p.neuron.channel,
                    p.neuron.pos_from_end,
                    p.value,
                )
            })
            .collect()
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Rule({} predicates)", self.inner.len())
    }
}

/// A toy transformer or planted model.
#[pyclass(frozen)]
struct Model {
    inner: CoreModel,
}

#[pymethods]
impl Model {
    /// Toy transformer with default dimensions.
    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn toy(seed: u64) -> PyResult<Self> {
        let inner = ModelSpec::Toy(ToyTransformerConfig::with_seed(seed))
            .build()
            .map_err(err)?;
        Ok(Self { inner })
    }

    /// Build from a model spec such as `{"kind": "planted", ...}`.
    #[staticmethod]
    fn from_spec_json(json: &str) -> PyResult<Self> {
        let spec: ModelSpec = parse("model spec", json)?;
        Ok(Self {
            inner: spec.build().map_err(err)?,
        })
    }

    fn spec_json(&self) -> PyResult<String> {
        to_json(&self.inner.spec())
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    #[getter]
    fn max_context(&self) -> usize {
        self.inner.max_context()
    }

    /// Greedy next token, optionally with a rule enforced.
    #[pyo3(signature = (tokens, rule = None))]
    fn next_token(&self, py: Python<'_>, tokens: Vec<u32>, rule: Option<Rule>) -> PyResult<u32> {
        let x = prompt(tokens)?;
        let iv = rule
            .map(|r| r.inner.interventions_for(x.len()).0)
            .unwrap_or_else(Interventions::none);
        py.detach(|| self.inner.next_token(&x, &iv))
            .map(|t| t.0)
            .map_err(err)
    }

    fn logits(&self, py: Python<'_>, tokens: Vec<u32>) -> PyResult<Vec<f64>> {
        let x = prompt(tokens)?;
        py.detach(|| self.inner.logits(&x, &Interventions::none()))
            .map_err(err)
    }

    /// `(layer, channel, pos_from_end, activation, contribution)` per neuron.
    #[pyo3(signature = (tokens, kind = "ablation"))]
    fn attributions(
        &self,
        py: Python<'_>,
        tokens: Vec<u32>,
        kind: &str,
    ) -> PyResult<Vec<AttributionRow>> {
        let x = prompt(tokens)?;
        let kind = attributor(kind)?;
        let map = py.detach(|| wt_ext(&self.inner, &x, kind)).map_err(err)?;
        Ok(map
            .values()
            .map(|r| {
                (
                    r.neuron.layer,
                    r.neuron.channel,
                    r.neuron.pos_from_end,
                    r.activation,
                    r.contribution,
                )
            })
            .collect())
    }

    /// Run the full explanation; returns the explanation as JSON. `params`
    /// is an optional JSON object overriding the defaults.
    #[pyo3(signature = (tokens, params = None))]
    fn explain(&self, py: Python<'_>, tokens: Vec<u32>, params: Option<&str>) -> PyResult<String> {
        let x = prompt(tokens)?;
        let params: ExplainParams = match params {
            Some(p) => parse("explain params", p)?,
            None => ExplainParams::default(),
        };
        let e = py
            .detach(|| explain(&self.inner, &x, &params))
            .map_err(err)?;
        to_json(&e)
    }

    /// Greedy generation with `rule` enforced at every step.
    fn generate(
        &self,
        py: Python<'_>,
        tokens: Vec<u32>,
        rule: Rule,
        steps: usize,
    ) -> PyResult<Vec<u32>> {
        let x = prompt(tokens)?;
        let out = py
            .detach(|| intervened_generate(&self.inner, &x, &rule.inner, steps))
            .map_err(err)?;
        Ok(out.into_iter().map(|t: TokenId| t.0).collect())
    }

    /// Top-k baseline rule.
    #[pyo3(signature = (tokens, k, coefficient, kind = "ablation"))]
    fn topk_rule(
        &self,
        tokens: Vec<u32>,
        k: usize,
        coefficient: f64,
        kind: &str,
    ) -> PyResult<Rule> {
        let x = prompt(tokens)?;
        let inner = topk_baseline_rule(
            &self.inner,
            &x,
            attributor(kind)?,
            BaselineConfig { k, coefficient },
        )
        .map_err(err)?;
        Ok(Rule { inner })
    }
}

/// Jaccard distance between two neuron sets given as `(layer, channel, pos_from_end)`.
#[pyfunction]
fn jaccard_instability(a: Vec<(u32, u32, u32)>, b: Vec<(u32, u32, u32)>) -> f64 {
    let conv = |v: Vec<(u32, u32, u32)>| {
        v.into_iter()
            .map(|(l, c, p)| NeuronRef::new(l, c, p))
            .collect::<BTreeSet<_>>()
    };
    jaccard(&conv(a), &conv(b)).value
}

#[pyfunction]
fn wilson_interval(hits: usize, trials: usize) -> (f64, f64) {
    wasd_core::search::wilson_interval(hits, trials, wasd_core::search::Z95)
}

/// Planted-model suite as JSON.
#[pyfunction]
#[pyo3(signature = (count = 50, seed = 0))]
fn planted_suite_json(count: usize, seed: u64) -> PyResult<String> {
    let suite = generate_planted_suite(&PlantedSuiteParams {
        count,
        seed,
        ..Default::default()
    })
    .map_err(err)?;
    to_json(&suite)
}

#[pymodule]
fn wasd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Rule>()?;
    m.add_function(wrap_pyfunction!(jaccard_instability, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_interval, m)?)?;
    m.add_function(wrap_pyfunction!(planted_suite_json, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
