//! Experiment configuration as plain `key = value` text.
//!
//! Values resolve as defaults < config file < command-line overrides.
//! Unknown keys are rejected. The canonical form (sorted keys, one per line)
//! is hashed to tag every artifact with the configuration that produced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fhn::{FhnParams, SimSettings};
use crate::hybrid::{DriveMode, HybridConfig};
use crate::nn::{TrainConfig, N_HIDDEN};

/// Whether hybrid training starts from fresh weights or from the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Fresh,
    Baseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub epsilon: f64,
    pub a: f64,
    pub dt: f64,
    /// Settling time for the embedded-network experiments.
    pub t_transient: f64,
    /// Settling time during hybrid training and its evaluations.
    pub hybrid_t_transient: f64,
    pub t_control: f64,
    pub gamma: f64,
    /// Grid for the γ sweep.
    pub gammas: Vec<f64>,
    /// The three γ of the per-digit embedding table.
    pub table1_gammas: Vec<f64>,
    pub seed: u64,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub use_bias: bool,

    pub hybrid_learning_rate: f64,
    pub hybrid_batch_size: usize,
    pub hybrid_epochs: usize,
    pub hybrid_init: InitKind,
    pub drive_mode: DriveMode,

    /// Per-digit size of the embedded-evaluation slices (200 → 2000 images).
    pub eval_per_class: usize,
    /// Evaluate the embedding on the complete splits instead of slices.
    pub full: bool,
    /// Per-digit sizes of the truncated hybrid training and test sets.
    pub hybrid_train_per_class: usize,
    pub hybrid_test_per_class: usize,
    /// Use the complete 60000/10000 splits for the "full" report columns;
    /// otherwise balanced slices of `eval_per_class`.
    pub report_full_sets: bool,

    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            epsilon: crate::fhn::DEFAULT_EPSILON,
            a: crate::fhn::DEFAULT_A,
            dt: crate::fhn::DEFAULT_DT,
            t_transient: 1000.0,
            hybrid_t_transient: 200.0,
            t_control: 100.0,
            gamma: -0.5,
            gammas: default_sweep_grid(),
            table1_gammas: vec![-0.5, -1.0, 0.5],
            seed: train.seed,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            use_bias: true,
            hybrid_learning_rate: HYBRID_LEARNING_RATE,
            hybrid_batch_size: HYBRID_BATCH_SIZE,
            hybrid_epochs: HYBRID_EPOCHS,
            hybrid_init: InitKind::Baseline,
            drive_mode: DriveMode::default(),
            eval_per_class: 200,
            full: false,
            hybrid_train_per_class: 1000,
            hybrid_test_per_class: 100,
            report_full_sets: true,
            data_dir: PathBuf::from("data/mnist"),
            out_dir: PathBuf::from("out"),
            jobs: 1,
        }
    }
}

pub const HYBRID_LEARNING_RATE: f64 = 0.5;
pub const HYBRID_BATCH_SIZE: usize = 16;
pub const HYBRID_EPOCHS: usize = 20;
pub const FAST_HYBRID_EPOCHS: usize = 16;

/// γ from −2 to 1 in steps of 0.25.
pub fn default_sweep_grid() -> Vec<f64> {
    (0..=12).map(|k| -2.0 + 0.25 * k as f64).collect()
}

const KEYS: &[&str] = &[
    "a",
    "batch_size",
    "data_dir",
    "drive_mode",
    "dt",
    "epochs",
    "epsilon",
    "eval_per_class",
    "full",
    "gamma",
    "gammas",
    "hybrid_batch_size",
    "hybrid_epochs",
    "hybrid_init",
    "hybrid_learning_rate",
    "hybrid_t_transient",
    "hybrid_test_per_class",
    "hybrid_train_per_class",
    "jobs",
    "learning_rate",
    "out_dir",
    "report_full_sets",
    "seed",
    "t_control",
    "t_transient",
    "table1_gammas",
    "use_bias",
];

/// Keys that locate files or set parallelism; they never change results and
/// stay out of the config hash.
const UNHASHED: &[&str] = &["data_dir", "jobs", "out_dir"];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "`{key}`: expected true/false, got `{value}`"
        ))),
    }
}

/// Comma-separated list of numbers.
pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let list: Vec<f64> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(Error::Config(format!("`{key}` is an empty list")));
    }
    Ok(list)
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "a" => self.a = parse_num(key, value)?,
            "dt" => self.dt = parse_num(key, value)?,
            "t_transient" => self.t_transient = parse_num(key, value)?,
            "hybrid_t_transient" => self.hybrid_t_transient = parse_num(key, value)?,
            "t_control" => self.t_control = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "gammas" => self.gammas = parse_list(key, value)?,
            "table1_gammas" => self.table1_gammas = parse_list(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "use_bias" => self.use_bias = parse_bool(key, value)?,
            "hybrid_learning_rate" => self.hybrid_learning_rate = parse_num(key, value)?,
            "hybrid_batch_size" => self.hybrid_batch_size = parse_num(key, value)?,
            "hybrid_epochs" => self.hybrid_epochs = parse_num(key, value)?,
            "hybrid_init" => {
                self.hybrid_init = match value {
                    "fresh" => InitKind::Fresh,
                    "baseline" => InitKind::Baseline,
                    _ => {
                        return Err(Error::Config(format!(
                            "`hybrid_init`: expected fresh or baseline, got `{value}`"
                        )))
                    }
                }
            }
            "drive_mode" => {
                self.drive_mode = DriveMode::parse(value).ok_or_else(|| {
                    Error::Config(format!(
                        "`drive_mode`: expected wrapped-tanh or pixel-tanh-only, got `{value}`"
                    ))
                })?
            }
            "eval_per_class" => self.eval_per_class = parse_num(key, value)?,
            "full" => self.full = parse_bool(key, value)?,
            "hybrid_train_per_class" => self.hybrid_train_per_class = parse_num(key, value)?,
            "hybrid_test_per_class" => self.hybrid_test_per_class = parse_num(key, value)?,
            "report_full_sets" => self.report_full_sets = parse_bool(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "jobs" => self.jobs = parse_num(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key `{key}` (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "epsilon" => self.epsilon.to_string(),
            "a" => self.a.to_string(),
            "dt" => self.dt.to_string(),
            "t_transient" => self.t_transient.to_string(),
            "hybrid_t_transient" => self.hybrid_t_transient.to_string(),
            "t_control" => self.t_control.to_string(),
            "gamma" => self.gamma.to_string(),
            "gammas" => fmt_list(&self.gammas),
            "table1_gammas" => fmt_list(&self.table1_gammas),
            "seed" => self.seed.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "use_bias" => self.use_bias.to_string(),
            "hybrid_learning_rate" => self.hybrid_learning_rate.to_string(),
            "hybrid_batch_size" => self.hybrid_batch_size.to_string(),
            "hybrid_epochs" => self.hybrid_epochs.to_string(),
            "hybrid_init" => match self.hybrid_init {
                InitKind::Fresh => "fresh".into(),
                InitKind::Baseline => "baseline".into(),
            },
            "drive_mode" => self.drive_mode.name().into(),
            "eval_per_class" => self.eval_per_class.to_string(),
            "full" => self.full.to_string(),
            "hybrid_train_per_class" => self.hybrid_train_per_class.to_string(),
            "hybrid_test_per_class" => self.hybrid_test_per_class.to_string(),
            "report_full_sets" => self.report_full_sets.to_string(),
            "data_dir" => self.data_dir.display().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "jobs" => self.jobs.to_string(),
            _ => unreachable!("unlisted key {key}"),
        }
    }

    /// Applies every `key = value` line of `text`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Shorter windows and smaller truncated sets for a quick run.
    pub fn apply_fast_profile(&mut self) {
        self.t_control = 50.0;
        self.hybrid_train_per_class = 200;
        self.hybrid_test_per_class = 50;
        self.hybrid_epochs = FAST_HYBRID_EPOCHS;
        self.report_full_sets = false;
    }

    /// Every key as `key=value`, sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key));
        }
        out
    }

    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        KEYS.iter().map(|&k| (k, self.get(k))).collect()
    }

    /// First 16 hex digits of the SHA-256 of the result-affecting keys.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for key in KEYS.iter().filter(|k| !UNHASHED.contains(k)) {
            hasher.update(format!("{key}={}\n", self.get(key)));
        }
        hex::encode(hasher.finalize())[..16].to_string()
    }

    pub fn fhn_params(&self) -> Result<FhnParams> {
        FhnParams::new(self.epsilon, self.a)
    }

    pub fn embed_config(&self, gamma: f64) -> Result<HybridConfig> {
        Ok(HybridConfig {
            gamma,
            fhn: self.fhn_params()?,
            sim: SimSettings::new(self.dt, self.t_transient, self.t_control)?,
            n_hidden: N_HIDDEN,
            drive_mode: self.drive_mode,
        })
    }

    pub fn hybrid_config(&self) -> Result<HybridConfig> {
        Ok(HybridConfig {
            gamma: self.gamma,
            fhn: self.fhn_params()?,
            sim: SimSettings::new(self.dt, self.hybrid_t_transient, self.t_control)?,
            n_hidden: N_HIDDEN,
            drive_mode: self.drive_mode,
        })
    }

    pub fn baseline_train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            shuffle: true,
            use_bias: self.use_bias,
        }
    }

    pub fn hybrid_train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.hybrid_learning_rate,
            batch_size: self.hybrid_batch_size,
            epochs: self.hybrid_epochs,
            seed: self.seed,
            shuffle: true,
            use_bias: self.use_bias,
        }
    }

    /// Checks every derived parameter set.
    pub fn validate(&self) -> Result<()> {
        self.embed_config(self.gamma)?.validate()?;
        self.hybrid_config()?;
        self.baseline_train_config().validate()?;
        self.hybrid_train_config().validate()?;
        if self.gammas.is_empty() || self.table1_gammas.is_empty() {
            return Err(Error::Config("γ lists must not be empty".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        Ok(())
    }
}
