//! Training configuration and its flat `key = value` file format.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::SplitMode;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Config(format!("unknown scale `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Desk => "desk",
            Self::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub encoder_lr: f64,
    pub decoder_lr: f64,
    pub encoder_warmup_steps: usize,
    pub decoder_warmup_steps: usize,
    pub total_steps: usize,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub max_neighbors: usize,
    pub source_token_budget: usize,
    pub per_ref_token_budget: usize,
    pub checkpoint_every: usize,
    pub rng_seed: u64,
    pub scale: Scale,
    pub model_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub feedforward_dim: usize,
    pub dropout: f64,
    pub encoder_dropout: f64,
    pub negative_docs: usize,
    pub negative_tokens: usize,
    pub max_sentences: usize,
    pub max_summary_len: usize,
    pub batch_size: usize,
    pub max_grad_norm: f64,
    pub beam_width: usize,
    pub mode: SplitMode,
    pub train_docs: usize,
    pub val_docs: usize,
    pub test_docs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Small CPU-sized defaults.
    pub fn desk() -> Self {
        Self {
            encoder_lr: 1e-2,
            decoder_lr: 2e-2,
            encoder_warmup_steps: 100,
            decoder_warmup_steps: 100,
            total_steps: 2000,
            alpha: 1.0,
            beta: 1.0,
            rho: 0.7,
            max_neighbors: 16,
            source_token_budget: 128,
            per_ref_token_budget: 32,
            checkpoint_every: 200,
            rng_seed: 0,
            scale: Scale::Desk,
            model_dim: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            attention_heads: 4,
            feedforward_dim: 128,
            dropout: 0.4,
            encoder_dropout: 0.1,
            negative_docs: 4,
            negative_tokens: 32,
            max_sentences: 7,
            max_summary_len: 40,
            batch_size: 4,
            max_grad_norm: 1.0,
            beam_width: 1,
            mode: SplitMode::Inductive,
            train_docs: 40,
            val_docs: 10,
            test_docs: 10,
        }
    }

    /// Published hyperparameters; not exercised by the test suite.
    pub fn paper() -> Self {
        Self {
            encoder_lr: 2e-3,
            decoder_lr: 2e-1,
            encoder_warmup_steps: 20_000,
            decoder_warmup_steps: 10_000,
            total_steps: 200_000,
            max_neighbors: 16,
            source_token_budget: 1240,
            per_ref_token_budget: 100,
            scale: Scale::Paper,
            model_dim: 768,
            encoder_layers: 12,
            decoder_layers: 6,
            attention_heads: 12,
            feedforward_dim: 3072,
            max_summary_len: 300,
            batch_size: 16,
            ..Self::desk()
        }
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Paper => Self::paper(),
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            model_dim: self.model_dim,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            attention_heads: self.attention_heads,
            feedforward_dim: self.feedforward_dim,
            max_positions: self
                .source_token_budget
                .max(self.per_ref_token_budget)
                .max(self.max_summary_len + 1),
            dropout: self.dropout,
            encoder_dropout: self.encoder_dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("encoder_lr", self.encoder_lr), ("decoder_lr", self.decoder_lr), ("max_grad_norm", self.max_grad_norm)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        let counts = [
            ("encoder_warmup_steps", self.encoder_warmup_steps),
            ("decoder_warmup_steps", self.decoder_warmup_steps),
            ("total_steps", self.total_steps),
            ("max_neighbors", self.max_neighbors),
            ("source_token_budget", self.source_token_budget),
            ("per_ref_token_budget", self.per_ref_token_budget),
            ("checkpoint_every", self.checkpoint_every),
            ("max_sentences", self.max_sentences),
            ("max_summary_len", self.max_summary_len),
            ("batch_size", self.batch_size),
            ("beam_width", self.beam_width),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho {} outside [0, 1]", self.rho)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        self.model_config(8).validate()
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        match key {
            "encoder_lr" => self.encoder_lr = parse(key, value)?,
            "decoder_lr" => self.decoder_lr = parse(key, value)?,
            "encoder_warmup_steps" => self.encoder_warmup_steps = parse(key, value)?,
            "decoder_warmup_steps" => self.decoder_warmup_steps = parse(key, value)?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "max_neighbors" => self.max_neighbors = parse(key, value)?,
            "source_token_budget" => self.source_token_budget = parse(key, value)?,
            "per_ref_token_budget" => self.per_ref_token_budget = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "rng_seed" => self.rng_seed = parse(key, value)?,
            "scale" => self.scale = value.parse()?,
            "model_dim" => self.model_dim = parse(key, value)?,
            "encoder_layers" => self.encoder_layers = parse(key, value)?,
            "decoder_layers" => self.decoder_layers = parse(key, value)?,
            "attention_heads" => self.attention_heads = parse(key, value)?,
            "feedforward_dim" => self.feedforward_dim = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "encoder_dropout" => self.encoder_dropout = parse(key, value)?,
            "negative_docs" => self.negative_docs = parse(key, value)?,
            "negative_tokens" => self.negative_tokens = parse(key, value)?,
            "max_sentences" => self.max_sentences = parse(key, value)?,
            "max_summary_len" => self.max_summary_len = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_grad_norm" => self.max_grad_norm = parse(key, value)?,
            "beam_width" => self.beam_width = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "train_docs" => self.train_docs = parse(key, value)?,
            "val_docs" => self.val_docs = parse(key, value)?,
            "test_docs" => self.test_docs = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines to the preset selected by a `scale` line
    /// (desk when absent). Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, message: format!("expected `key = value`, got `{line}`") })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let scale = pairs
            .iter()
            .find(|(k, _)| k == "scale")
            .map(|(_, v)| v.parse())
            .transpose()?
            .unwrap_or(Scale::Desk);
        let mut c = Self::for_scale(scale);
        for (k, v) in &pairs {
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every field as `key = value`, in declaration order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("encoder_lr", self.encoder_lr.to_string()),
            ("decoder_lr", self.decoder_lr.to_string()),
            ("encoder_warmup_steps", self.encoder_warmup_steps.to_string()),
            ("decoder_warmup_steps", self.decoder_warmup_steps.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("rho", self.rho.to_string()),
            ("max_neighbors", self.max_neighbors.to_string()),
            ("source_token_budget", self.source_token_budget.to_string()),
            ("per_ref_token_budget", self.per_ref_token_budget.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("rng_seed", self.rng_seed.to_string()),
            ("scale", self.scale.to_string()),
            ("model_dim", self.model_dim.to_string()),
            ("encoder_layers", self.encoder_layers.to_string()),
            ("decoder_layers", self.decoder_layers.to_string()),
            ("attention_heads", self.attention_heads.to_string()),
            ("feedforward_dim", self.feedforward_dim.to_string()),
            ("dropout", self.dropout.to_string()),
            ("encoder_dropout", self.encoder_dropout.to_string()),
            ("negative_docs", self.negative_docs.to_string()),
            ("negative_tokens", self.negative_tokens.to_string()),
            ("max_sentences", self.max_sentences.to_string()),
            ("max_summary_len", self.max_summary_len.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_grad_norm", self.max_grad_norm.to_string()),
            ("beam_width", self.beam_width.to_string()),
            ("mode", self.mode.to_string()),
            ("train_docs", self.train_docs.to_string()),
            ("val_docs", self.val_docs.to_string()),
            ("test_docs", self.test_docs.to_string()),
        ]
    }
}

/// `base * min(s^-0.5, s * warmup^-1.5)` with `s = step + 1`: linear warmup
/// to `base / sqrt(warmup)`, then inverse square-root decay.
pub fn learning_rate(base: f64, warmup: usize, step: usize) -> f64 {
    let s = (step + 1) as f64;
    let w = warmup as f64;
    base * s.powf(-0.5).min(s * w.powf(-1.5))
}
