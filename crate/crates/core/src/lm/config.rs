//! Training configuration and its flat `key = value` text form.
//!
//! ```text
//! # comments run to end of line
//! preset = char-small
//! hidden_dims = 64
//! lr_initial = 1.0
//! ```
//!
//! A `preset` line is applied before every other key regardless of where it
//! appears. Unknown keys and repeated keys are rejected.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cells::{CellConfig, CellKind, OutputActivation, Stack};
use crate::error::{Error, Result};
use crate::tensor::Precision;

use super::vocab::TokenMode;

pub const DEFAULT_SEED: u64 = 1;

pub const PRESETS: &[&str] = &["ptb-medium", "ptb-large", "bwb", "text8", "char-small"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: Option<String>,
    pub kind: CellKind,
    pub activation: OutputActivation,
    /// One entry per layer.
    pub hidden_dims: Vec<usize>,
    pub projection: Option<usize>,
    /// Also the input width of the first layer.
    pub embedding_dim: usize,
    pub token_mode: TokenMode,
    pub max_vocab: Option<usize>,
    pub lr_initial: f64,
    pub lr_decay: f64,
    /// Last epoch (1-based) trained at `lr_initial`.
    pub decay_start_epoch: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub bptt_length: usize,
    pub dropout_rate: f64,
    pub clip_norm: Option<f64>,
    pub init_scale: f64,
    pub forget_bias: f64,
    pub seed: Option<u64>,
    pub precision: Precision,
    /// Off by default: wall time is the one metric that is not reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::preset("char-small").expect("built-in preset")
    }
}

const KEYS: &[&str] = &[
    "preset",
    "kind",
    "activation",
    "hidden_dims",
    "projection",
    "embedding_dim",
    "token_mode",
    "max_vocab",
    "lr_initial",
    "lr_decay",
    "decay_start_epoch",
    "max_epochs",
    "batch_size",
    "bptt_length",
    "dropout_rate",
    "clip_norm",
    "init_scale",
    "forget_bias",
    "seed",
    "precision",
    "log_wall_time",
];

fn parse_num<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_opt<V: FromStr>(key: &str, value: &str) -> Result<Option<V>> {
    if value == "none" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn show_opt<V: fmt::Display>(v: &Option<V>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

impl TrainConfig {
    /// Built-in starting points. The schedules are defaults chosen for this
    /// tool, not published hyperparameters.
    pub fn preset(name: &str) -> Result<Self> {
        let base = TrainConfig {
            preset: Some(name.to_string()),
            kind: CellKind::RanGeneral,
            activation: OutputActivation::Tanh,
            hidden_dims: vec![64],
            projection: None,
            embedding_dim: 64,
            token_mode: TokenMode::Char,
            max_vocab: None,
            lr_initial: 1.0,
            lr_decay: 0.7,
            decay_start_epoch: 4,
            max_epochs: 10,
            batch_size: 32,
            bptt_length: 64,
            dropout_rate: 0.0,
            clip_norm: Some(5.0),
            init_scale: 0.1,
            forget_bias: 1.0,
            seed: None,
            precision: Precision::F64,
            log_wall_time: false,
        };
        let cfg = match name {
            "char-small" => base,
            "ptb-medium" => TrainConfig {
                hidden_dims: vec![650, 650],
                embedding_dim: 650,
                token_mode: TokenMode::Word,
                max_vocab: Some(10_000),
                lr_initial: 0.7,
                lr_decay: 0.8,
                decay_start_epoch: 6,
                max_epochs: 39,
                batch_size: 20,
                bptt_length: 35,
                dropout_rate: 0.5,
                init_scale: 0.05,
                ..base
            },
            "ptb-large" => TrainConfig {
                hidden_dims: vec![1500, 1500],
                embedding_dim: 1500,
                token_mode: TokenMode::Word,
                max_vocab: Some(10_000),
                lr_initial: 0.7,
                lr_decay: 0.87,
                decay_start_epoch: 14,
                max_epochs: 55,
                batch_size: 20,
                bptt_length: 35,
                dropout_rate: 0.65,
                clip_norm: Some(10.0),
                init_scale: 0.04,
                ..base
            },
            "bwb" => TrainConfig {
                hidden_dims: vec![2048],
                projection: Some(512),
                embedding_dim: 512,
                token_mode: TokenMode::Word,
                max_vocab: Some(800_000),
                lr_initial: 0.2,
                lr_decay: 1.0,
                decay_start_epoch: 1,
                max_epochs: 5,
                batch_size: 128,
                bptt_length: 20,
                dropout_rate: 0.1,
                init_scale: 0.05,
                ..base
            },
            "text8" => TrainConfig {
                hidden_dims: vec![1024, 1024, 2048],
                embedding_dim: 128,
                token_mode: TokenMode::Text8,
                lr_initial: 0.7,
                lr_decay: 0.8,
                decay_start_epoch: 6,
                max_epochs: 30,
                batch_size: 128,
                bptt_length: 180,
                dropout_rate: 0.2,
                init_scale: 0.05,
                ..base
            },
            other => {
                return Err(Error::config(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::config(format!("line {}: unknown key `{key}`", n + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("line {}: key `{key}` given twice", n + 1)));
            }
            pairs.push((key.to_string(), value.to_string()));
        }
        let mut cfg = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, name)) => TrainConfig::preset(name)?,
            None => TrainConfig::default(),
        };
        for (key, value) in &pairs {
            if key != "preset" {
                cfg.set(key, value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "kind" => self.kind = value.parse()?,
            "activation" => self.activation = value.parse()?,
            "hidden_dims" => {
                self.hidden_dims = value
                    .split(',')
                    .map(|v| parse_num(key, v.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "projection" => self.projection = parse_opt(key, value)?,
            "embedding_dim" => self.embedding_dim = parse_num(key, value)?,
            "token_mode" => self.token_mode = value.parse()?,
            "max_vocab" => self.max_vocab = parse_opt(key, value)?,
            "lr_initial" => self.lr_initial = parse_num(key, value)?,
            "lr_decay" => self.lr_decay = parse_num(key, value)?,
            "decay_start_epoch" => self.decay_start_epoch = parse_num(key, value)?,
            "max_epochs" => self.max_epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "bptt_length" => self.bptt_length = parse_num(key, value)?,
            "dropout_rate" => self.dropout_rate = parse_num(key, value)?,
            "clip_norm" => self.clip_norm = parse_opt(key, value)?,
            "init_scale" => self.init_scale = parse_num(key, value)?,
            "forget_bias" => self.forget_bias = parse_num(key, value)?,
            "seed" => self.seed = parse_opt(key, value)?,
            "precision" => self.precision = value.parse()?,
            "log_wall_time" => self.log_wall_time = parse_num(key, value)?,
            "preset" => *self = TrainConfig::preset(value)?,
            other => return Err(Error::config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("`{name}` must be positive, got {v}")))
            }
        };
        positive("lr_initial", self.lr_initial)?;
        positive("lr_decay", self.lr_decay)?;
        positive("init_scale", self.init_scale)?;
        if let Some(c) = self.clip_norm {
            positive("clip_norm", c)?;
        }
        if self.lr_decay > 1.0 {
            return Err(Error::config(format!(
                "`lr_decay` must be at most 1, got {}",
                self.lr_decay
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "`dropout_rate` must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !self.forget_bias.is_finite() {
            return Err(Error::config("`forget_bias` must be finite"));
        }
        for (name, v) in [
            ("max_epochs", self.max_epochs),
            ("batch_size", self.batch_size),
            ("bptt_length", self.bptt_length),
            ("embedding_dim", self.embedding_dim),
        ] {
            if v == 0 {
                return Err(Error::config(format!("`{name}` must be positive")));
            }
        }
        self.stack().map(|_| ())
    }

    pub fn stack(&self) -> Result<Stack> {
        if self.hidden_dims.is_empty() {
            return Err(Error::config("`hidden_dims` needs at least one layer"));
        }
        let mut layers = Vec::with_capacity(self.hidden_dims.len());
        let mut input = self.embedding_dim;
        for &width in &self.hidden_dims {
            let mut cfg = CellConfig::new(self.kind, input, width).with_activation(self.activation);
            cfg.projection = self.projection;
            cfg.validate()?;
            input = cfg.output_dim();
            layers.push(cfg);
        }
        Stack::new(layers)
    }

    /// Learning rate of 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = epoch.saturating_sub(self.decay_start_epoch);
        self.lr_initial * self.lr_decay.powi(decays as i32)
    }

    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    /// Text form accepted by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let dims: Vec<String> = self.hidden_dims.iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "kind = {}", self.kind);
        let _ = writeln!(out, "activation = {}", self.activation);
        let _ = writeln!(out, "hidden_dims = {}", dims.join(","));
        let _ = writeln!(out, "projection = {}", show_opt(&self.projection));
        let _ = writeln!(out, "embedding_dim = {}", self.embedding_dim);
        let _ = writeln!(out, "token_mode = {}", self.token_mode);
        let _ = writeln!(out, "max_vocab = {}", show_opt(&self.max_vocab));
        let _ = writeln!(out, "lr_initial = {:?}", self.lr_initial);
        let _ = writeln!(out, "lr_decay = {:?}", self.lr_decay);
        let _ = writeln!(out, "decay_start_epoch = {}", self.decay_start_epoch);
        let _ = writeln!(out, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "bptt_length = {}", self.bptt_length);
        let _ = writeln!(out, "dropout_rate = {:?}", self.dropout_rate);
        let _ = writeln!(
            out,
            "clip_norm = {}",
            show_opt(&self.clip_norm.map(|c| format!("{c:?}")))
        );
        let _ = writeln!(out, "init_scale = {:?}", self.init_scale);
        let _ = writeln!(out, "forget_bias = {:?}", self.forget_bias);
        let _ = writeln!(out, "seed = {}", show_opt(&self.seed));
        let _ = writeln!(out, "precision = {}", self.precision);
        let _ = writeln!(out, "log_wall_time = {}", self.log_wall_time);
        out
    }
}
