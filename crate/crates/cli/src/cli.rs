// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wasd_core::attribution::AttributorKind;
use wasd_core::eval::{Method, PlantedSuiteParams};
use wasd_core::model::{ModelSpec, TokenId};
use wasd_core::search::{AcceptorSpec, NeighborhoodMode};

use crate::commands::{self, Outcome};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_TAU_NOT_REACHED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "wasd",
    version,
    about = "Sparse neuron-clamping rules that pin a model's next-token prediction"
)]
pub struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Explain one prompt (or every prompt of a suite).
    Explain {
        #[command(flatten)]
        run: RunArgs,
        /// Exit 0 even when tau was not reached.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Compare WASD with top-k baselines over a suite.
    Experiment {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated methods, e.g. wasd,top-3,top-5.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long)]
        eval_samples: Option<usize>,
        #[arg(long)]
        eval_seed: Option<u64>,
        #[arg(long)]
        task: Option<String>,
    },
    /// Generate tokens with a saved rule enforced at every step.
    Intervene {
        #[command(flatten)]
        run: RunArgs,
        /// Rule JSON, as written by `explain`.
        #[arg(long)]
        rule: PathBuf,
        #[arg(long, default_value_t = 1)]
        steps: usize,
    },
    /// Exhaustive minimal rule over an enumerated neighborhood.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        bound: Option<usize>,
        #[arg(long)]
        allow_partial: bool,
    },
    /// Pick lambda by mean final precision.
    GridSearch {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Write a seeded planted-model suite.
    GenSuite {
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AttributorArg {
    Ablation,
    PlantedExact,
}

/// Flags shared by the run commands; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON model spec file ({"kind": "toy" | "planted", ...}).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Prompt as comma-separated token ids.
    #[arg(long, value_delimiter = ',')]
    pub prompt: Option<Vec<u32>>,
    /// Prompt text, tokenized by word hashing.
    #[arg(long)]
    pub text: Option<String>,
    /// Planted suite or prompt-list JSON file.
    #[arg(long)]
    pub suite: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Neighborhood seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sampled neighborhood size.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub edit_prob: Option<f64>,
    #[arg(long)]
    pub protect_last: Option<usize>,
    /// Use the full neighborhood within this many edits instead of sampling.
    #[arg(long)]
    pub enumerate: Option<usize>,
    #[arg(long, value_enum)]
    pub attributor: Option<AttributorArg>,
    /// Accept any of these tokens instead of the original prediction.
    #[arg(long, value_delimiter = ',')]
    pub accept_tokens: Option<Vec<u32>>,
    /// Output directory [default: $WASD_OUTPUT_DIR, then ./wasd-out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p).map_err(|e| match e {
                CliError::Io { .. } => CliError::Usage(e.to_string()),
                other => other,
            })?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.model {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("reading model {}: {e}", p.display())))?;
            let spec: ModelSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::json(format!("parsing model {}", p.display()), e))?;
            cfg.model = Some(spec);
        }
        if self.prompt.is_some() || self.text.is_some() || self.suite.is_some() {
            cfg.prompt = None;
            cfg.text = None;
            cfg.suite = None;
            cfg.toy_suite = None;
        }
        if let Some(ids) = &self.prompt {
            cfg.prompt = Some(ids.iter().copied().map(TokenId).collect());
        }
        if let Some(t) = &self.text {
            cfg.text = Some(t.clone());
        }
        if let Some(s) = &self.suite {
            cfg.suite = Some(s.clone());
        }
        let e = &mut cfg.explain;
        if let Some(v) = self.tau {
            e.tau = v;
        }
        if let Some(v) = self.lambda {
            e.lambda = v;
        }
        if let Some(v) = self.seed {
            e.perturb.seed = v;
        }
        if let Some(v) = self.samples {
            e.perturb.sample_count = v;
        }
        if let Some(v) = self.edit_prob {
            e.perturb.per_position_edit_prob = v;
        }
        if let Some(v) = self.protect_last {
            e.perturb.protect_last_k = v;
        }
        if let Some(v) = self.enumerate {
            e.neighborhood = NeighborhoodMode::Enumerated { max_edits: v };
        }
        if let Some(a) = self.attributor {
            e.attributor = match a {
                AttributorArg::Ablation => AttributorKind::Ablation,
                AttributorArg::PlantedExact => AttributorKind::PlantedExact,
            };
        }
        if let Some(tokens) = &self.accept_tokens {
            e.acceptor = AcceptorSpec::TokenSet {
                tokens: tokens.iter().copied().map(TokenId).collect(),
            };
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        Ok(cfg)
    }
}

fn finish(outcome: Outcome, allow_partial: bool) -> i32 {
    for p in &outcome.written {
        eprintln!("wrote {}", p.display());
    }
    if outcome.complete || allow_partial {
        EXIT_OK
    } else {
        EXIT_TAU_NOT_REACHED
    }
}

fn dispatch(command: Command) -> CliResult<i32> {
    match command {
        Command::Explain { run, allow_partial } => {
            let cfg = run.resolve()?;
            let outcome = commands::cmd_explain(&cfg)?;
            if !outcome.complete {
                eprintln!("tau was not reached for every prompt");
            }
            Ok(finish(outcome, allow_partial))
        }
        Command::Experiment {
            run,
            methods,
            eval_samples,
            eval_seed,
            task,
        } => {
            let mut cfg = run.resolve()?;
            if let Some(m) = methods {
                cfg.experiment.methods = m;
            }
            if let Some(n) = eval_samples {
                cfg.experiment.eval_sample_count = n;
            }
            if let Some(s) = eval_seed {
                cfg.experiment.eval_seed = s;
            }
            if let Some(t) = task {
                cfg.experiment.task = t;
            }
            let outcome = commands::cmd_experiment(&cfg)?;
            if let Some(table) = outcome
                .written
                .iter()
                .find(|p| p.extension().is_some_and(|e| e == "txt"))
            {
                if let Ok(text) = std::fs::read_to_string(table) {
                    print!("{text}");
                }
            }
            Ok(finish(outcome, false))
        }
        Command::Intervene { run, rule, steps } => {
            let cfg = run.resolve()?;
            let (outcome, out) = commands::cmd_intervene(&cfg, &rule, steps)?;
            let ids: Vec<String> = out.tokens.iter().map(|t| t.to_string()).collect();
            println!("{}", ids.join(","));
            Ok(finish(outcome, false))
        }
        Command::Oracle {
            run,
            bound,
            allow_partial,
        } => {
            let mut cfg = run.resolve()?;
            if let Some(b) = bound {
                cfg.oracle_bound = b;
            }
            Ok(finish(commands::cmd_oracle(&cfg)?, allow_partial))
        }
        Command::GridSearch { run, grid } => {
            let mut cfg = run.resolve()?;
            if let Some(g) = grid {
                cfg.lambda_grid = g;
            }
            Ok(finish(commands::cmd_grid_search(&cfg)?, false))
        }
        Command::GenSuite { count, seed, out } => {
            let params = PlantedSuiteParams {
                count,
                seed,
                ..Default::default()
            };
            Ok(finish(commands::cmd_gen_suite(&params, &out)?, false))
        }
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {}", CliError::Threads(e.to_string()));
            return EXIT_RUNTIME;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
