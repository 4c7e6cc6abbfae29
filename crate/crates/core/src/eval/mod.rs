// SPDX-License-Identifier: MIT OR Apache-2.0

//! Metrics, baselines, the exhaustive oracle, lambda grid search, seeded
//! suites and the experiment runner.

mod baseline;
mod experiment;
mod grid;
mod metrics;
mod oracle;
mod suite;

pub use baseline::{topk_baseline_rule, topk_rule_from_map, BaselineConfig};
pub use experiment::{
    run_experiment, CoefficientRow, ExperimentParams, ExperimentReport, Method, MethodCell,
    MethodSummary, PromptRow,
};
pub use grid::{grid_search_lambda, GridRow, GridSearchResult, LAMBDA_GRID};
pub use metrics::{jaccard_instability, InstabilityScore, MeanCi};
pub use oracle::{brute_force_minimal_rule, OracleResult, DEFAULT_ORACLE_BOUND};
pub use suite::{
    generate_planted_suite, planted_instance, toy_prompt_suite, PlantedInstance, PlantedSuite,
    PlantedSuiteParams,
};

use crate::model::{ActivationModel, Prompt};
use crate::rng::mix;
use crate::search::ExplainParams;

/// One prompt to explain, with the model that answers it.
#[derive(Clone, Copy)]
pub struct Case<'a> {
    pub model: &'a dyn ActivationModel,
    pub prompt: &'a Prompt,
}

/// Parameters for case `index` of a suite: the neighborhood seed is derived
/// from the suite seed and the index.
pub fn case_params(params: &ExplainParams, index: usize) -> ExplainParams {
    let mut p = params.clone();
    p.perturb.seed = mix(params.perturb.seed, index as u64);
    p
}
