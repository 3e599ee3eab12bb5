//! Line-oriented `key=value` run configuration.
//!
//! Blank lines and everything after a `#` are ignored. Every key is optional,
//! unknown or repeated keys are errors, and values are range-checked as they
//! are read so that errors can point at the offending line. An empty value
//! clears an optional path.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use beerla::train::{SyntheticSpec, TrainConfig};
use beerla::unroll::{DEFAULT_GAMMA, DEFAULT_ITERATIONS, DEFAULT_LAMBDA, DEFAULT_RANK};
use beerla::{LearnableParams, SolverConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "config line {n}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeMethod {
    Beerla,
    Reinhard,
    Macenko,
}

impl NormalizeMethod {
    pub fn name(self) -> &'static str {
        match self {
            NormalizeMethod::Beerla => "beerla",
            NormalizeMethod::Reinhard => "reinhard",
            NormalizeMethod::Macenko => "macenko",
        }
    }
}

impl FromStr for NormalizeMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "beerla" => Ok(NormalizeMethod::Beerla),
            "reinhard" => Ok(NormalizeMethod::Reinhard),
            "macenko" => Ok(NormalizeMethod::Macenko),
            _ => Err(format!("unknown method '{s}' (expected beerla, reinhard or macenko)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Macenko,
    SparseNmf,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Macenko => "macenko",
            BaselineMethod::SparseNmf => "sparse-nmf",
        }
    }
}

impl FromStr for BaselineMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "macenko" => Ok(BaselineMethod::Macenko),
            "sparse-nmf" => Ok(BaselineMethod::SparseNmf),
            _ => Err(format!("unknown baseline '{s}' (expected macenko or sparse-nmf)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub rank: usize,
    pub iters: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// Seeds `S_init`, the synthetic data and sparse NMF.
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    /// An image file or a directory of PNGs.
    pub input: Option<PathBuf>,
    /// 0 processes whole images.
    pub tile_size: usize,
    pub denoise: bool,
    pub method: NormalizeMethod,
    pub template: Option<PathBuf>,
    /// JSON `c x r` stain matrix for `normalize --method beerla`.
    pub reference: Option<PathBuf>,
    /// JSON `LearnableParams`, e.g. written by `train`.
    pub params: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub per_domain: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub fd_step: f64,
    /// 0 is full batch.
    pub batch_size: usize,
    pub freeze: bool,
    pub table: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub baseline: BaselineMethod,
    pub nmf_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        let train = TrainConfig::default();
        RunConfig {
            rank: DEFAULT_RANK,
            iters: DEFAULT_ITERATIONS,
            gamma: DEFAULT_GAMMA,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            jobs: 1,
            out: PathBuf::from("out"),
            input: None,
            tile_size: 0,
            denoise: false,
            method: NormalizeMethod::Beerla,
            template: None,
            reference: None,
            params: None,
            dataset: None,
            width: synth.width,
            height: synth.height,
            per_domain: synth.per_domain,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            fd_step: train.fd_step,
            batch_size: 0,
            freeze: false,
            table: None,
            history: None,
            baseline: BaselineMethod::Macenko,
            nmf_iters: 200,
        }
    }
}

pub const KEYS: [&str; 27] = [
    "rank",
    "iters",
    "gamma",
    "lambda",
    "seed",
    "jobs",
    "out",
    "input",
    "tile_size",
    "denoise",
    "method",
    "template",
    "reference",
    "params",
    "dataset",
    "width",
    "height",
    "per_domain",
    "epochs",
    "learning_rate",
    "fd_step",
    "batch_size",
    "freeze",
    "table",
    "history",
    "baseline",
    "nmf_iters",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse '{value}'"))
}

fn at_least(key: &str, value: &str, min: usize) -> Result<usize, String> {
    let v: usize = parse_num(key, value)?;
    if v < min {
        return Err(format!("{key} must be at least {min}, got {v}"));
    }
    Ok(v)
}

fn nonneg(key: &str, value: &str) -> Result<f64, String> {
    let v: f64 = parse_num(key, value)?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(format!("{key} must be finite and nonnegative, got {value}"));
    }
    Ok(v)
}

fn flag(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{key} must be true or false, got '{value}'")),
    }
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Sets one key from its textual value, validating the range.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "rank" => self.rank = at_least(key, value, 1)?,
            "iters" => self.iters = at_least(key, value, 1)?,
            "gamma" => self.gamma = nonneg(key, value)?,
            "lambda" => self.lambda = nonneg(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "jobs" => self.jobs = at_least(key, value, 1)?,
            "out" => {
                if value.is_empty() {
                    return Err("out must not be empty".into());
                }
                self.out = PathBuf::from(value);
            }
            "input" => self.input = path(value),
            "tile_size" => self.tile_size = parse_num(key, value)?,
            "denoise" => self.denoise = flag(key, value)?,
            "method" => self.method = value.parse()?,
            "template" => self.template = path(value),
            "reference" => self.reference = path(value),
            "params" => self.params = path(value),
            "dataset" => self.dataset = path(value),
            "width" => self.width = at_least(key, value, 1)?,
            "height" => self.height = at_least(key, value, 1)?,
            "per_domain" => self.per_domain = at_least(key, value, 1)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = nonneg(key, value)?,
            "fd_step" => {
                let v = nonneg(key, value)?;
                if v == 0.0 {
                    return Err("fd_step must be positive".into());
                }
                self.fd_step = v;
            }
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "freeze" => self.freeze = flag(key, value)?,
            "table" => self.table = path(value),
            "history" => self.history = path(value),
            "baseline" => self.baseline = value.parse()?,
            "nmf_iters" => self.nmf_iters = parse_num(key, value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "rank" => self.rank.to_string(),
            "iters" => self.iters.to_string(),
            "gamma" => self.gamma.to_string(),
            "lambda" => self.lambda.to_string(),
            "seed" => self.seed.to_string(),
            "jobs" => self.jobs.to_string(),
            "out" => self.out.display().to_string(),
            "input" => show_path(&self.input),
            "tile_size" => self.tile_size.to_string(),
            "denoise" => self.denoise.to_string(),
            "method" => self.method.name().to_string(),
            "template" => show_path(&self.template),
            "reference" => show_path(&self.reference),
            "params" => show_path(&self.params),
            "dataset" => show_path(&self.dataset),
            "width" => self.width.to_string(),
            "height" => self.height.to_string(),
            "per_domain" => self.per_domain.to_string(),
            "epochs" => self.epochs.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "fd_step" => self.fd_step.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "freeze" => self.freeze.to_string(),
            "table" => show_path(&self.table),
            "history" => show_path(&self.history),
            "baseline" => self.baseline.name().to_string(),
            "nmf_iters" => self.nmf_iters.to_string(),
            _ => return None,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError {
                line: Some(i + 1),
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(err(format!("duplicate key '{key}'")));
            }
            cfg.set(key, value).map_err(err)?;
            seen.push(key);
        }
        Ok(cfg)
    }

    /// Every key in canonical order; parsing the result gives back `self`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push('=');
            out.push_str(&self.get(key).expect("every listed key has a value"));
            out.push('\n');
        }
        out
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig::with_shape(self.rank, self.iters)
    }

    /// Seeded defaults with the configured `γ` and `λ`.
    pub fn default_params(&self, channels: usize) -> LearnableParams {
        LearnableParams {
            gamma: self.gamma,
            lambda: self.lambda,
            ..LearnableParams::seeded(channels, self.rank, self.seed)
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            width: self.width,
            height: self.height,
            per_domain: self.per_domain,
            ..SyntheticSpec::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: (self.batch_size > 0).then_some(self.batch_size),
            fd_step: self.fd_step,
            seed: self.seed,
            freeze_params: self.freeze,
            solver: self.solver(),
        }
    }
}
