// SPDX-License-Identifier: MIT OR Apache-2.0

//! Side-by-side comparison of WASD against top-k baselines.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::{topk_rule_from_map, BaselineConfig};
use super::grid::LAMBDA_GRID;
use super::metrics::{jaccard_instability, MeanCi};
use super::{case_params, Case};
use crate::attribution::{original_output, wt_ext, AttributionCache, AttributionMap};
use crate::error::{Result, WasdError};
use crate::model::{Prompt, TokenId};
use crate::perturb::{
    gen_neighborhood, neutral_prefix_perturb, NeighborhoodSample, NeutralPrefixSet,
};
use crate::rng::mix;
use crate::search::{
    build_sample, estimate_precision, explain_cached, ExplainParams, PrecisionEstimate, Rule,
};

const EVAL_TAG: u64 = 0xe7a1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Wasd,
    TopK(usize),
}

impl Method {
    pub fn defaults() -> Vec<Method> {
        vec![
            Method::Wasd,
            Method::TopK(3),
            Method::TopK(5),
            Method::TopK(10),
        ]
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Wasd => f.write_str("wasd"),
            Method::TopK(k) => write!(f, "top-{k}"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = WasdError;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("wasd") {
            return Ok(Method::Wasd);
        }
        let k = s
            .strip_prefix("top-")
            .or_else(|| s.strip_prefix("top"))
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k > 0)
            .ok_or_else(|| WasdError::InvalidConfig(format!("unknown method {s:?}")))?;
        Ok(Method::TopK(k))
    }
}

impl TryFrom<String> for Method {
    type Error = WasdError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentParams {
    /// Label for the report's Task column.
    pub task: String,
    pub explain: ExplainParams,
    pub methods: Vec<Method>,
    /// Fixed top-k coefficients keyed by k. Missing entries are chosen from
    /// `coefficient_grid` by mean precision on the search neighborhoods.
    pub baseline_coefficients: BTreeMap<usize, f64>,
    pub coefficient_grid: Vec<f64>,
    pub eval_sample_count: usize,
    pub eval_seed: u64,
    pub instability: bool,
    /// `None` uses the default prefixes tokenized for each model's vocabulary.
    pub neutral_prefixes: Option<NeutralPrefixSet>,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            task: "task".into(),
            explain: ExplainParams::default(),
            methods: Method::defaults(),
            baseline_coefficients: BTreeMap::new(),
            coefficient_grid: LAMBDA_GRID.to_vec(),
            eval_sample_count: 500,
            eval_seed: 1,
            instability: true,
            neutral_prefixes: None,
        }
    }
}

impl ExperimentParams {
    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(WasdError::InvalidConfig("no methods selected".into()));
        }
        if self.eval_sample_count == 0 {
            return Err(WasdError::InvalidConfig(
                "eval_sample_count must be at least 1".into(),
            ));
        }
        let needs_grid = self
            .methods
            .iter()
            .any(|m| matches!(m, Method::TopK(k) if !self.baseline_coefficients.contains_key(k)));
        if needs_grid && self.coefficient_grid.is_empty() {
            return Err(WasdError::InvalidConfig("coefficient_grid is empty".into()));
        }
        for (&k, &coefficient) in &self.baseline_coefficients {
            BaselineConfig { k, coefficient }.validate()?;
        }
        Ok(())
    }

    /// Neighborhood used to score rules for case `index`; seeded apart from
    /// the search neighborhood.
    pub fn eval_sample(
        &self,
        x: &Prompt,
        index: usize,
        vocab_size: usize,
    ) -> Result<NeighborhoodSample> {
        let mut p = self.explain.perturb.clone();
        p.sample_count = self.eval_sample_count;
        p.seed = mix(mix(self.eval_seed, EVAL_TAG), index as u64);
        gen_neighborhood(x, &p, vocab_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCell {
    pub method: Method,
    pub rule: Rule,
    pub size: usize,
    /// Precision on the evaluation neighborhood.
    pub precision: PrecisionEstimate,
    /// WASD only: precision on its own search neighborhood.
    pub search_precision: Option<f64>,
    pub reached_tau: Option<bool>,
    /// Jaccard distance to the rule derived on the prefixed prompt.
    pub instability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRow {
    pub index: usize,
    pub prompt: Prompt,
    pub target_token: TokenId,
    /// Index of the neutral prefix used, if one preserved the output.
    pub neutral_prefix: Option<usize>,
    pub cells: Vec<MethodCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub precision: MeanCi,
    pub instability: Option<MeanCi>,
    pub size: MeanCi,
    pub reached_tau: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub k: usize,
    pub coefficient: f64,
    pub mean_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub params: ExperimentParams,
    pub baseline_coefficients: BTreeMap<usize, f64>,
    pub coefficient_search: Vec<CoefficientRow>,
    pub summaries: Vec<MethodSummary>,
    /// Prompts left out of the instability means because no neutral prefix
    /// kept the output.
    pub instability_excluded: usize,
    pub rows: Vec<PromptRow>,
}

struct Prepared {
    target: TokenId,
    attribution: AttributionMap,
    search_sample: NeighborhoodSample,
}

pub fn run_experiment(cases: &[Case<'_>], params: &ExperimentParams) -> Result<ExperimentReport> {
    params.validate()?;
    if cases.is_empty() {
        return Err(WasdError::InvalidConfig("experiment suite is empty".into()));
    }
    let needs_topk = params.methods.iter().any(|m| matches!(m, Method::TopK(_)));

    let prepared = if needs_topk {
        cases
            .par_iter()
            .enumerate()
            .map(|(i, case)| {
                let cp = case_params(&params.explain, i);
                Ok(Prepared {
                    target: original_output(case.model, case.prompt)?,
                    attribution: wt_ext(case.model, case.prompt, cp.attributor)?,
                    search_sample: build_sample(case.prompt, &cp, case.model.vocab_size())?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let (coefficients, coefficient_search) = choose_coefficients(cases, &prepared, params)?;

    let rows = cases
        .par_iter()
        .enumerate()
        .map(|(i, case)| run_case(case, i, prepared.get(i), &coefficients, params))
        .collect::<Result<Vec<_>>>()?;

    let instability_excluded = if params.instability {
        rows.iter().filter(|r| r.neutral_prefix.is_none()).count()
    } else {
        0
    };
    let summaries = params
        .methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let cells: Vec<&MethodCell> = rows.iter().map(|r| &r.cells[m]).collect();
            let precision: Vec<f64> = cells.iter().map(|c| c.precision.value).collect();
            let size: Vec<f64> = cells.iter().map(|c| c.size as f64).collect();
            let instability: Vec<f64> = cells.iter().filter_map(|c| c.instability).collect();
            MethodSummary {
                method,
                precision: MeanCi::from_values(&precision).expect("non-empty suite"),
                instability: MeanCi::from_values(&instability),
                size: MeanCi::from_values(&size).expect("non-empty suite"),
                reached_tau: (method == Method::Wasd)
                    .then(|| cells.iter().filter(|c| c.reached_tau == Some(true)).count()),
            }
        })
        .collect();

    Ok(ExperimentReport {
        params: params.clone(),
        baseline_coefficients: coefficients,
        coefficient_search,
        summaries,
        instability_excluded,
        rows,
    })
}

fn choose_coefficients(
    cases: &[Case<'_>],
    prepared: &[Prepared],
    params: &ExperimentParams,
) -> Result<(BTreeMap<usize, f64>, Vec<CoefficientRow>)> {
    let mut chosen = BTreeMap::new();
    let mut table = Vec::new();
    for method in &params.methods {
        let Method::TopK(k) = *method else { continue };
        if let Some(&c) = params.baseline_coefficients.get(&k) {
            chosen.insert(k, c);
            continue;
        }
        let mut best: Option<(f64, f64)> = None;
        for &coefficient in &params.coefficient_grid {
            let cfg = BaselineConfig { k, coefficient };
            let precisions = cases
                .par_iter()
                .zip(prepared.par_iter())
                .map(|(case, prep)| {
                    let rule = topk_rule_from_map(&prep.attribution, cfg)?;
                    let acceptor = params.explain.acceptor.resolve(prep.target);
                    Ok(
                        estimate_precision(case.model, &rule, &prep.search_sample, &acceptor)?
                            .value,
                    )
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = precisions.iter().sum::<f64>() / precisions.len() as f64;
            table.push(CoefficientRow {
                k,
                coefficient,
                mean_precision: mean,
            });
            if improves(best, coefficient, mean) {
                best = Some((coefficient, mean));
            }
        }
        chosen.insert(k, best.expect("grid is non-empty").0);
    }
    Ok((chosen, table))
}

/// Higher mean wins; equal means go to the smaller coefficient.
fn improves(best: Option<(f64, f64)>, coefficient: f64, mean: f64) -> bool {
    match best {
        None => true,
        Some((c, m)) => mean > m || (mean == m && coefficient < c),
    }
}

fn run_case(
    case: &Case<'_>,
    index: usize,
    prepared: Option<&Prepared>,
    coefficients: &BTreeMap<usize, f64>,
    params: &ExperimentParams,
) -> Result<PromptRow> {
    let model = case.model;
    let x = case.prompt;
    let cp = case_params(&params.explain, index);
    let cache = AttributionCache::new();
    let target = original_output(model, x)?;
    let acceptor = params.explain.acceptor.resolve(target);
    let eval_sample = params.eval_sample(x, index, model.vocab_size())?;

    let prefixed = if params.instability {
        let set = match &params.neutral_prefixes {
            Some(s) => s.clone(),
            None => NeutralPrefixSet::default_for(model.vocab_size()),
        };
        match neutral_prefix_perturb(model, x, &set, cp.perturb.seed) {
            Ok(p) => Some(p),
            Err(WasdError::NoNeutralPrefix { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let mut cells = Vec::with_capacity(params.methods.len());
    for &method in &params.methods {
        let (rule, search_precision, reached_tau, prefixed_rule) = match method {
            Method::Wasd => {
                let e = explain_cached(model, x, &cp, &cache)?;
                let other = match &prefixed {
                    Some(p) => Some(explain_cached(model, &p.prompt, &cp, &cache)?.result.rule),
                    None => None,
                };
                (
                    e.result.rule,
                    Some(e.result.precision.value),
                    Some(e.result.reached_tau),
                    other,
                )
            }
            Method::TopK(k) => {
                let cfg = BaselineConfig {
                    k,
                    coefficient: coefficients[&k],
                };
                let rule = match prepared {
                    Some(prep) => topk_rule_from_map(&prep.attribution, cfg)?,
                    None => topk_rule_from_map(&wt_ext(model, x, cp.attributor)?, cfg)?,
                };
                let other = match &prefixed {
                    Some(p) => Some(topk_rule_from_map(
                        &wt_ext(model, &p.prompt, cp.attributor)?,
                        cfg,
                    )?),
                    None => None,
                };
                (rule, None, None, other)
            }
        };
        let precision = estimate_precision(model, &rule, &eval_sample, &acceptor)?;
        let instability =
            prefixed_rule.map(|r| jaccard_instability(&rule.neurons(), &r.neurons()).value);
        cells.push(MethodCell {
            method,
            size: rule.len(),
            rule,
            precision,
            search_precision,
            reached_tau,
            instability,
        });
    }
    Ok(PromptRow {
        index,
        prompt: x.clone(),
        target_token: target,
        neutral_prefix: prefixed.map(|p| p.prefix_index),
        cells,
    })
}

impl ExperimentReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Aligned plain-text table: Method, Task, Precision, Instability, Size.
    pub fn to_table(&self) -> String {
        let fmt = |m: &MeanCi, digits: usize| {
            format!("{:.*} ± {:.*}", digits, m.mean, digits, m.half_width())
        };
        let header = ["Method", "Task", "Precision", "Instability", "Size"];
        let mut lines: Vec<[String; 5]> = vec![header.map(String::from)];
        for s in &self.summaries {
            lines.push([
                s.method.to_string(),
                self.params.task.clone(),
                fmt(&s.precision, 3),
                s.instability
                    .as_ref()
                    .map_or_else(|| "n/a".into(), |m| fmt(m, 3)),
                fmt(&s.size, 2),
            ]);
        }
        let widths: Vec<usize> = (0..5)
            .map(|c| {
                lines
                    .iter()
                    .map(|l| l[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cols: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cols.join("  ").trim_end());
        }
        out
    }
}
