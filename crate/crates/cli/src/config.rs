//! Flat `key = value` configuration files and flag/file/default merging.
//!
//! Precedence is strict: command-line flags override file values, which
//! override built-in defaults. Unknown or duplicate keys in a file are
//! usage errors — a typo must never silently fall back to a default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use fixpoint_lm::{Activation, GradMode, LossNorm, TrainConfig};

use crate::CliError;

/// Keys accepted in a configuration file, in echo order.
pub const KNOWN_KEYS: &[&str] = &[
    "grad-mode",
    "rho",
    "epochs",
    "batch-size",
    "learning-rate",
    "beta1",
    "beta2",
    "epsilon",
    "clip-norm",
    "loss-norm",
    "hidden",
    "embed-dim",
    "activation",
    "bias",
    "init-range",
    "seed",
    "min-count",
    "workers",
];

/// Parsed but untyped file contents.
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn empty() -> Self {
        FileConfig {
            values: BTreeMap::new(),
        }
    }

    /// Parse `key = value` lines. Blank lines and `#` comment lines are
    /// skipped; inline comments are not supported (a `#` in a value is kept).
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!(
                    "{}:{}: expected `key = value`, got {raw:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::usage(format!(
                    "{}:{}: unknown key {key:?} (known: {})",
                    path.display(),
                    lineno + 1,
                    KNOWN_KEYS.join(", ")
                )));
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(CliError::usage(format!(
                    "{}:{}: duplicate key {key:?}",
                    path.display(),
                    lineno + 1
                )));
            }
        }
        Ok(FileConfig { values })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key));
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                CliError::usage(format!("config key {key} = {raw:?} is invalid: {e}"))
            }),
        }
    }

    fn get_raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }
}

/// Hyperparameter flags shared by `train` and `sweep-rho`. Every field is
/// optional so that "not given on the command line" is distinguishable from
/// a value.
#[derive(clap::Args, Debug)]
pub struct HyperArgs {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<std::path::PathBuf>,
    /// Training passes over the corpus.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Sentences per gradient step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long, alias = "lr")]
    pub learning_rate: Option<f64>,
    /// Adam first-moment decay.
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Adam second-moment decay.
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Adam denominator floor.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Gradient L2 clip threshold, or `none`.
    #[arg(long, value_name = "NORM|none")]
    pub clip_norm: Option<String>,
    /// Batch loss normalization: per-word or per-sequence.
    #[arg(long)]
    pub loss_norm: Option<String>,
    /// Hidden state width.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Input embedding width; 0 keeps one-hot inputs.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Hidden nonlinearity: tanh or sigmoid.
    #[arg(long)]
    pub activation: Option<String>,
    /// Learn additive bias terms (true/false).
    #[arg(long, value_name = "BOOL")]
    pub bias: Option<bool>,
    /// Half-width of the uniform parameter initialization.
    #[arg(long)]
    pub init_range: Option<f64>,
    /// Seed for initialization and batch shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop words seen fewer than this many times from the vocabulary.
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Worker threads for parallel sections; 0 uses all cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Fully merged settings for a run.
#[derive(Debug)]
pub struct Settings {
    pub train: TrainConfig,
    pub min_count: usize,
    pub workers: usize,
}

fn parse_clip(raw: &str) -> Result<Option<f64>, CliError> {
    if raw.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    raw.parse::<f64>()
        .map(Some)
        .map_err(|e| CliError::usage(format!("clip-norm {raw:?} is invalid: {e}")))
}

impl HyperArgs {
    /// Merge defaults, the optional config file, and these flags.
    ///
    /// `grad` carries the gradient-mode flags when the command exposes them;
    /// commands that pick gradient modes themselves pass `None`, and then
    /// reject `grad-mode`/`rho` from the file as well.
    pub fn resolve(&self, grad: Option<&GradArgs>) -> Result<Settings, CliError> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::empty(),
        };
        let defaults = TrainConfig::default();

        let grad_mode = match grad {
            Some(flags) => {
                let name = flags
                    .grad_mode
                    .clone()
                    .or_else(|| file.get_raw("grad-mode").map(str::to_string))
                    .unwrap_or_else(|| GradMode::Bptt.name().to_string());
                let rho = match flags.rho.map(Ok).or_else(|| file.get("rho").transpose()) {
                    None => None,
                    Some(r) => Some(r?),
                };
                match (name.as_str(), rho) {
                    ("bptt", Some(_)) => {
                        return Err(CliError::usage(
                            "rho only applies to the fixed-point gradient modes; \
                             drop it or pick --grad-mode fpi / fpi-detach"
                                .to_string(),
                        ))
                    }
                    ("bptt", None) => GradMode::Bptt,
                    (other, None) => {
                        GradMode::parse(other, 1).map_err(CliError::from)?;
                        return Err(CliError::usage(format!(
                            "grad mode {other} needs a sweep count; add --rho N"
                        )));
                    }
                    (other, Some(r)) => GradMode::parse(other, r).map_err(CliError::from)?,
                }
            }
            None => {
                for key in ["grad-mode", "rho"] {
                    if file.has(key) {
                        return Err(CliError::usage(format!(
                            "config key {key} does not apply here: this command chooses \
                             gradient modes itself"
                        )));
                    }
                }
                defaults.grad_mode
            }
        };

        let clip_norm = match &self.clip_norm {
            Some(raw) => parse_clip(raw)?,
            None => match file.get_raw("clip-norm") {
                Some(raw) => parse_clip(raw)?,
                None => defaults.clip_norm,
            },
        };
        let loss_norm = match self
            .loss_norm
            .as_deref()
            .or_else(|| file.get_raw("loss-norm"))
        {
            Some(raw) => LossNorm::parse(raw).map_err(CliError::from)?,
            None => defaults.loss_norm,
        };
        let activation = match self
            .activation
            .as_deref()
            .or_else(|| file.get_raw("activation"))
        {
            Some(raw) => Activation::parse(raw).map_err(CliError::from)?,
            None => defaults.activation,
        };

        let train = TrainConfig {
            grad_mode,
            epochs: self.epochs.or(file.get("epochs")?).unwrap_or(defaults.epochs),
            batch_size: self
                .batch_size
                .or(file.get("batch-size")?)
                .unwrap_or(defaults.batch_size),
            learning_rate: self
                .learning_rate
                .or(file.get("learning-rate")?)
                .unwrap_or(defaults.learning_rate),
            beta1: self.beta1.or(file.get("beta1")?).unwrap_or(defaults.beta1),
            beta2: self.beta2.or(file.get("beta2")?).unwrap_or(defaults.beta2),
            epsilon: self
                .epsilon
                .or(file.get("epsilon")?)
                .unwrap_or(defaults.epsilon),
            clip_norm,
            loss_norm,
            hidden: self.hidden.or(file.get("hidden")?).unwrap_or(defaults.hidden),
            embed_dim: self
                .embed_dim
                .or(file.get("embed-dim")?)
                .unwrap_or(defaults.embed_dim),
            activation,
            bias: self.bias.or(file.get("bias")?).unwrap_or(defaults.bias),
            init_range: self
                .init_range
                .or(file.get("init-range")?)
                .unwrap_or(defaults.init_range),
            seed: self.seed.or(file.get("seed")?).unwrap_or(defaults.seed),
        };
        train.validate().map_err(CliError::usage_from)?;

        let settings = Settings {
            train,
            min_count: self.min_count.or(file.get("min-count")?).unwrap_or(1),
            workers: self.workers.or(file.get("workers")?).unwrap_or(0),
        };
        Ok(settings)
    }
}

/// Gradient-mode flags, exposed only by commands where the user picks one.
#[derive(clap::Args, Debug)]
pub struct GradArgs {
    /// Gradient scheme: bptt, fpi, or fpi-detach.
    #[arg(long)]
    pub grad_mode: Option<String>,
    /// Fixed-point sweep count for the fpi modes.
    #[arg(long)]
    pub rho: Option<usize>,
}

impl Settings {
    /// Print the fully merged configuration, one `key = value` per line,
    /// in [`KNOWN_KEYS`] order.
    pub fn echo(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        let t = &self.train;
        writeln!(out, "# resolved configuration")?;
        writeln!(out, "grad-mode = {}", t.grad_mode.name())?;
        match t.grad_mode.rho() {
            Some(rho) => writeln!(out, "rho = {rho}")?,
            None => writeln!(out, "rho = n/a")?,
        }
        writeln!(out, "epochs = {}", t.epochs)?;
        writeln!(out, "batch-size = {}", t.batch_size)?;
        writeln!(out, "learning-rate = {}", t.learning_rate)?;
        writeln!(out, "beta1 = {}", t.beta1)?;
        writeln!(out, "beta2 = {}", t.beta2)?;
        writeln!(out, "epsilon = {}", t.epsilon)?;
        match t.clip_norm {
            Some(c) => writeln!(out, "clip-norm = {c}")?,
            None => writeln!(out, "clip-norm = none")?,
        }
        writeln!(out, "loss-norm = {}", t.loss_norm)?;
        writeln!(out, "hidden = {}", t.hidden)?;
        writeln!(out, "embed-dim = {}", t.embed_dim)?;
        writeln!(out, "activation = {}", t.activation)?;
        writeln!(out, "bias = {}", t.bias)?;
        writeln!(out, "init-range = {}", t.init_range)?;
        writeln!(out, "seed = {}", t.seed)?;
        writeln!(out, "min-count = {}", self.min_count)?;
        writeln!(out, "workers = {}", self.workers)?;
        Ok(())
    }
}
