//! Command line front end for `beerla`: a `key=value` run configuration with
//! flag overrides, and one function per subcommand.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_baseline, cmd_decompose, cmd_eval, cmd_normalize, cmd_synth, cmd_train};
pub use config::{ConfigError, RunConfig};
pub use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "beerla", version, about = "Beer-Lambert stain decomposition and normalization")]
pub struct Cli {
    /// key=value configuration file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Images processed concurrently.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct SolverArgs {
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Trained parameters (JSON) instead of the seeded defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Factor images into stains and densities.
    Decompose {
        /// Image file or directory of PNGs.
        input: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        tile_size: Option<usize>,
        #[arg(long)]
        denoise: bool,
    },
    /// Normalize image colors.
    Normalize {
        input: Option<PathBuf>,
        /// beerla, reinhard or macenko.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        template: Option<PathBuf>,
        /// JSON c x r stain matrix to render with (beerla only).
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        tile_size: Option<usize>,
        #[arg(long)]
        denoise: bool,
    },
    /// Generate the synthetic two-domain dataset.
    Synth {
        #[arg(long)]
        per_domain: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },
    /// Train the solver parameters on domain A.
    Train {
        /// Dataset directory written by `synth`; generated from the seed if absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Train the classifier only.
        #[arg(long)]
        freeze: bool,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// APU per row of a metric table, or a summary of a training history.
    Eval {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Run a classical baseline on images.
    Baseline {
        input: Option<PathBuf>,
        /// macenko or sparse-nmf.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        nmf_iters: Option<usize>,
    },
}

fn push<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, value: &Option<T>) {
    if let Some(v) = value {
        out.push((key, v.to_string()));
    }
}

fn push_path(out: &mut Vec<(&'static str, String)>, key: &'static str, value: &Option<PathBuf>) {
    push(out, key, &value.as_ref().map(|p| p.display().to_string()));
}

fn push_solver(out: &mut Vec<(&'static str, String)>, s: &SolverArgs) {
    push(out, "rank", &s.rank);
    push(out, "iters", &s.iters);
    push(out, "gamma", &s.gamma);
    push(out, "lambda", &s.lambda);
    push_path(out, "params", &s.params);
}

impl Cli {
    /// Flag values as config keys, in the order they are applied.
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        push(&mut out, "seed", &self.seed);
        push(&mut out, "jobs", &self.jobs);
        push_path(&mut out, "out", &self.out);
        match &self.command {
            Command::Decompose {
                input,
                solver,
                tile_size,
                denoise,
            } => {
                push_path(&mut out, "input", input);
                push_solver(&mut out, solver);
                push(&mut out, "tile_size", tile_size);
                push(&mut out, "denoise", &denoise.then_some(true));
            }
            Command::Normalize {
                input,
                method,
                template,
                reference,
                solver,
                tile_size,
                denoise,
            } => {
                push_path(&mut out, "input", input);
                push(&mut out, "method", method);
                push_path(&mut out, "template", template);
                push_path(&mut out, "reference", reference);
                push_solver(&mut out, solver);
                push(&mut out, "tile_size", tile_size);
                push(&mut out, "denoise", &denoise.then_some(true));
            }
            Command::Synth {
                per_domain,
                width,
                height,
            } => {
                push(&mut out, "per_domain", per_domain);
                push(&mut out, "width", width);
                push(&mut out, "height", height);
            }
            Command::Train {
                dataset,
                epochs,
                learning_rate,
                freeze,
                solver,
            } => {
                push_path(&mut out, "dataset", dataset);
                push(&mut out, "epochs", epochs);
                push(&mut out, "learning_rate", learning_rate);
                push(&mut out, "freeze", &freeze.then_some(true));
                push_solver(&mut out, solver);
            }
            Command::Eval { table, history } => {
                push_path(&mut out, "table", table);
                push_path(&mut out, "history", history);
            }
            Command::Baseline {
                input,
                method,
                rank,
                lambda,
                nmf_iters,
            } => {
                push_path(&mut out, "input", input);
                push(&mut out, "baseline", method);
                push(&mut out, "rank", rank);
                push(&mut out, "lambda", lambda);
                push(&mut out, "nmf_iters", nmf_iters);
            }
        }
        out
    }

    /// The config file (if any) with every flag applied on top.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        for (key, value) in self.overrides() {
            cfg.set(key, &value)
                .map_err(|m| CliError::Usage(format!("--{}: {m}", key.replace('_', "-"))))?;
        }
        Ok(cfg)
    }

    pub fn run(&self) -> CliResult<Vec<PathBuf>> {
        let cfg = self.resolve()?;
        match self.command {
            Command::Decompose { .. } => cmd_decompose(&cfg),
            Command::Normalize { .. } => cmd_normalize(&cfg),
            Command::Synth { .. } => cmd_synth(&cfg),
            Command::Train { .. } => cmd_train(&cfg),
            Command::Eval { .. } => cmd_eval(&cfg),
            Command::Baseline { .. } => cmd_baseline(&cfg),
        }
    }
}
