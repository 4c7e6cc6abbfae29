// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration. Values come from defaults, then an optional JSON file,
//! then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wasd_core::eval::{
    toy_prompt_suite, ExperimentParams, Method, PlantedSuite, DEFAULT_ORACLE_BOUND, LAMBDA_GRID,
};
use wasd_core::model::{Model, ModelSpec, Prompt, TokenId, WordHashTokenizer};
use wasd_core::perturb::NeutralPrefixSet;
use wasd_core::search::ExplainParams;

use crate::error::{CliError, CliResult};

pub const OUTPUT_DIR_ENV: &str = "WASD_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "wasd-out";

/// Randomly generated prompts for a single model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySuiteSpec {
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ToySuiteSpec {
    fn default() -> Self {
        Self {
            count: 100,
            min_len: 4,
            max_len: 7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub task: String,
    pub methods: Vec<Method>,
    pub baseline_coefficients: BTreeMap<usize, f64>,
    pub coefficient_grid: Vec<f64>,
    pub eval_sample_count: usize,
    pub eval_seed: u64,
    pub instability: bool,
    /// Text file with one neutral prefix per line.
    pub neutral_prefixes_file: Option<PathBuf>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        let d = ExperimentParams::default();
        Self {
            task: d.task,
            methods: d.methods,
            baseline_coefficients: d.baseline_coefficients,
            coefficient_grid: d.coefficient_grid,
            eval_sample_count: d.eval_sample_count,
            eval_seed: d.eval_seed,
            instability: d.instability,
            neutral_prefixes_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelSpec>,
    /// Token ids of a single prompt.
    pub prompt: Option<Vec<TokenId>>,
    /// Text prompt, tokenized by word hashing into the model's vocabulary.
    pub text: Option<String>,
    /// Planted suite file, or a JSON array of token-id prompts.
    pub suite: Option<PathBuf>,
    pub toy_suite: Option<ToySuiteSpec>,
    pub explain: ExplainParams,
    pub experiment: ExperimentSettings,
    pub lambda_grid: Vec<f64>,
    pub oracle_bound: usize,
    /// Where artifacts go. Not echoed into artifacts: it never affects results.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            prompt: None,
            text: None,
            suite: None,
            toy_suite: None,
            explain: ExplainParams::default(),
            experiment: ExperimentSettings::default(),
            lambda_grid: LAMBDA_GRID.to_vec(),
            oracle_bound: DEFAULT_ORACLE_BOUND,
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SuiteFile {
    Planted(PlantedSuite),
    Prompts(Vec<Prompt>),
}

/// Models and prompts a command runs over.
pub struct Workload {
    pub models: Vec<Model>,
    /// `(model index, prompt)` pairs.
    pub items: Vec<(usize, Prompt)>,
}

impl RunConfig {
    /// Read a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading config {}", path.display()), e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::json(format!("parsing config {}", path.display()), e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.suite.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.experiment.neutral_prefixes_file.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.output_dir.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    fn check_files(&self) -> CliResult<()> {
        for p in [&self.suite, &self.experiment.neutral_prefixes_file]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return Err(CliError::Usage(format!("file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    fn build_model(&self) -> CliResult<Model> {
        let spec = self
            .model
            .as_ref()
            .ok_or_else(|| CliError::Usage("no model specified".into()))?;
        Ok(spec.build()?)
    }

    /// Resolve the configured prompt source. Exactly one of `prompt`,
    /// `text`, `suite` and `toy_suite` must be set.
    pub fn workload(&self) -> CliResult<Workload> {
        self.check_files()?;
        let sources = [
            self.prompt.is_some(),
            self.text.is_some(),
            self.suite.is_some(),
            self.toy_suite.is_some(),
        ];
        match sources.iter().filter(|&&s| s).count() {
            0 => {
                return Err(CliError::Usage(
                    "no prompt given (prompt, text, suite or toy_suite)".into(),
                ))
            }
            1 => {}
            _ => {
                return Err(CliError::Usage(
                    "give exactly one of prompt, text, suite, toy_suite".into(),
                ))
            }
        }
        if let Some(ids) = &self.prompt {
            let model = self.build_model()?;
            let prompt = Prompt::new(ids.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
            return Ok(Workload {
                models: vec![model],
                items: vec![(0, prompt)],
            });
        }
        if let Some(text) = &self.text {
            let model = self.build_model()?;
            use wasd_core::model::ActivationModel;
            let tokens = WordHashTokenizer::new(model.vocab_size()).encode(text);
            let prompt = Prompt::new(tokens).map_err(|e| CliError::Usage(e.to_string()))?;
            return Ok(Workload {
                models: vec![model],
                items: vec![(0, prompt)],
            });
        }
        if let Some(spec) = &self.toy_suite {
            let model = self.build_model()?;
            use wasd_core::model::ActivationModel;
            let prompts = toy_prompt_suite(
                spec.count,
                spec.min_len,
                spec.max_len,
                model.vocab_size(),
                spec.seed,
            )?;
            return Ok(Workload {
                models: vec![model],
                items: prompts.into_iter().map(|p| (0, p)).collect(),
            });
        }
        let path = self.suite.as_ref().expect("one source is set");
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading suite {}", path.display()), e))?;
        let suite: SuiteFile = serde_json::from_str(&text)
            .map_err(|e| CliError::json(format!("parsing suite {}", path.display()), e))?;
        match suite {
            SuiteFile::Planted(s) => {
                if s.instances.is_empty() {
                    return Err(CliError::Usage("suite has no instances".into()));
                }
                let models = s
                    .instances
                    .iter()
                    .map(|i| i.build())
                    .collect::<Result<Vec<_>, _>>()?;
                let models = models.into_iter().map(Model::Planted).collect();
                let items = s
                    .instances
                    .into_iter()
                    .enumerate()
                    .map(|(i, inst)| (i, inst.prompt))
                    .collect();
                Ok(Workload { models, items })
            }
            SuiteFile::Prompts(prompts) => {
                if prompts.is_empty() {
                    return Err(CliError::Usage("suite has no prompts".into()));
                }
                let model = self.build_model()?;
                Ok(Workload {
                    models: vec![model],
                    items: prompts.into_iter().map(|p| (0, p)).collect(),
                })
            }
        }
    }

    pub fn experiment_params(&self, vocab_size: usize) -> CliResult<ExperimentParams> {
        let s = &self.experiment;
        let neutral_prefixes = match &s.neutral_prefixes_file {
            Some(p) => Some(NeutralPrefixSet::from_file(p, vocab_size)?),
            None => None,
        };
        Ok(ExperimentParams {
            task: s.task.clone(),
            explain: self.explain.clone(),
            methods: s.methods.clone(),
            baseline_coefficients: s.baseline_coefficients.clone(),
            coefficient_grid: s.coefficient_grid.clone(),
            eval_sample_count: s.eval_sample_count,
            eval_seed: s.eval_seed,
            instability: s.instability,
            neutral_prefixes,
        })
    }
}
