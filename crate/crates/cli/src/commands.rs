// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command implementations. Each returns the paths it wrote and whether the
//! run reached its goal.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wasd_core::eval::{
    brute_force_minimal_rule, case_params, generate_planted_suite, grid_search_lambda,
    run_experiment, Case, ExperimentReport, GridSearchResult, PlantedSuiteParams,
};
use wasd_core::model::{ActivationModel, Prompt, TokenId};
use wasd_core::perturb::NeighborhoodSample;
use wasd_core::predicate::generate_predicates;
use wasd_core::search::{
    explain, intervened_generate, Explanation, NeighborhoodMode, PrecisionEstimate, Rule,
};

use crate::artifact::{to_json, write_json, write_text, write_timing, RunArtifact};
use crate::config::{RunConfig, Workload};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    /// False when some explanation missed `tau` or the oracle found nothing.
    pub complete: bool,
}

fn cases(w: &Workload) -> Vec<Case<'_>> {
    w.items
        .iter()
        .map(|(m, p)| Case {
            model: &w.models[*m] as &dyn ActivationModel,
            prompt: p,
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainOutput {
    pub explanations: Vec<Explanation>,
}

pub fn explain_all(cfg: &RunConfig) -> CliResult<ExplainOutput> {
    let w = cfg.workload()?;
    let single = w.items.len() == 1;
    let explanations = cases(&w)
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let params = if single {
                cfg.explain.clone()
            } else {
                case_params(&cfg.explain, i)
            };
            explain(c.model, c.prompt, &params)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExplainOutput { explanations })
}

pub fn cmd_explain(cfg: &RunConfig) -> CliResult<Outcome> {
    let start = Instant::now();
    let out = explain_all(cfg)?;
    let dir = cfg.output_dir();
    let complete = out.explanations.iter().all(|e| e.result.reached_tau);
    let mut written = vec![write_json(
        &dir,
        "explain.json",
        &RunArtifact::new("explain", cfg, &out),
    )?];
    if let [only] = out.explanations.as_slice() {
        written.push(write_json(&dir, "rule.json", only.rule())?);
        written.push(write_text(&dir, "rule.txt", &only.rule().render())?);
    } else {
        let mut text = String::new();
        for (i, e) in out.explanations.iter().enumerate() {
            text.push_str(&format!(
                "# case {i} ({} predicates)\n{}",
                e.rule().len(),
                e.rule().render()
            ));
        }
        written.push(write_text(&dir, "rules.txt", &text)?);
    }
    written.push(write_timing(&dir, "explain", start.elapsed())?);
    Ok(Outcome { written, complete })
}

pub fn experiment_report(cfg: &RunConfig) -> CliResult<ExperimentReport> {
    let w = cfg.workload()?;
    let params = cfg.experiment_params(w.models[0].vocab_size())?;
    Ok(run_experiment(&cases(&w), &params)?)
}

pub fn cmd_experiment(cfg: &RunConfig) -> CliResult<Outcome> {
    let start = Instant::now();
    let report = experiment_report(cfg)?;
    let dir = cfg.output_dir();
    let written = vec![
        write_json(
            &dir,
            "experiment.json",
            &RunArtifact::new("experiment", cfg, &report),
        )?,
        write_text(&dir, "experiment.txt", &report.to_table())?,
        write_timing(&dir, "experiment", start.elapsed())?,
    ];
    Ok(Outcome {
        written,
        complete: true,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterventionOutput {
    pub prompt: Prompt,
    pub rule: Rule,
    pub steps: usize,
    pub tokens: Vec<TokenId>,
}

pub fn read_rule(path: &Path) -> CliResult<Rule> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("reading rule {}", path.display()), e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::json(format!("parsing rule {}", path.display()), e))
}

pub fn cmd_intervene(
    cfg: &RunConfig,
    rule_path: &Path,
    steps: usize,
) -> CliResult<(Outcome, InterventionOutput)> {
    let start = Instant::now();
    let rule = read_rule(rule_path)?;
    let w = cfg.workload()?;
    let [(m, prompt)] = w.items.as_slice() else {
        return Err(CliError::Usage("intervene takes a single prompt".into()));
    };
    if steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    let tokens = intervened_generate(&w.models[*m], prompt, &rule, steps)?;
    let out = InterventionOutput {
        prompt: prompt.clone(),
        rule,
        steps,
        tokens,
    };
    let dir = cfg.output_dir();
    let written = vec![
        write_json(
            &dir,
            "intervene.json",
            &RunArtifact::new("intervene", cfg, &out),
        )?,
        write_timing(&dir, "intervene", start.elapsed())?,
    ];
    Ok((
        Outcome {
            written,
            complete: true,
        },
        out,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleCase {
    pub prompt: Prompt,
    pub target_token: TokenId,
    pub candidate_count: usize,
    pub found: bool,
    pub rule: Option<Rule>,
    pub precision: Option<PrecisionEstimate>,
    pub subsets_tested: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleOutput {
    pub cases: Vec<OracleCase>,
}

pub fn oracle_all(cfg: &RunConfig) -> CliResult<OracleOutput> {
    let NeighborhoodMode::Enumerated { max_edits } = cfg.explain.neighborhood else {
        return Err(CliError::Usage(
            "the oracle needs an enumerated neighborhood (--enumerate N)".into(),
        ));
    };
    let w = cfg.workload()?;
    let p = &cfg.explain;
    let cases = cases(&w)
        .par_iter()
        .map(|c| {
            let sample = NeighborhoodSample::exhaustive(
                c.prompt,
                max_edits,
                &p.perturb,
                c.model.vocab_size(),
            )?;
            let cands = generate_predicates(c.model, c.prompt, &sample, p.attributor, p.lambda)?;
            let target = wasd_core::attribution::original_output(c.model, c.prompt)?;
            let acceptor = p.acceptor.resolve(target);
            let r = brute_force_minimal_rule(
                c.model,
                &cands,
                &sample,
                p.tau,
                &acceptor,
                cfg.oracle_bound,
            )?;
            Ok(OracleCase {
                prompt: c.prompt.clone(),
                target_token: target,
                candidate_count: cands.len(),
                found: r.rule.is_some(),
                rule: r.rule,
                precision: r.precision,
                subsets_tested: r.subsets_tested,
            })
        })
        .collect::<Result<Vec<_>, wasd_core::WasdError>>()?;
    Ok(OracleOutput { cases })
}

pub fn cmd_oracle(cfg: &RunConfig) -> CliResult<Outcome> {
    let start = Instant::now();
    let out = oracle_all(cfg)?;
    let dir = cfg.output_dir();
    let complete = out.cases.iter().all(|c| c.found);
    let written = vec![
        write_json(&dir, "oracle.json", &RunArtifact::new("oracle", cfg, &out))?,
        write_timing(&dir, "oracle", start.elapsed())?,
    ];
    Ok(Outcome { written, complete })
}

pub fn cmd_grid_search(cfg: &RunConfig) -> CliResult<Outcome> {
    let start = Instant::now();
    let w = cfg.workload()?;
    let result: GridSearchResult = grid_search_lambda(&cases(&w), &cfg.lambda_grid, &cfg.explain)?;
    let dir = cfg.output_dir();
    let written = vec![
        write_json(
            &dir,
            "grid-search.json",
            &RunArtifact::new("grid-search", cfg, &result),
        )?,
        write_timing(&dir, "grid-search", start.elapsed())?,
    ];
    Ok(Outcome {
        written,
        complete: true,
    })
}

pub fn cmd_gen_suite(params: &PlantedSuiteParams, path: &Path) -> CliResult<Outcome> {
    let suite = generate_planted_suite(params)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, to_json(&suite)?)
        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    Ok(Outcome {
        written: vec![path.to_path_buf()],
        complete: true,
    })
}
