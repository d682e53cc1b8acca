use std::fmt::Write as _;
use std::str::FromStr;

use super::TrainingError;
use crate::market_data::Alpha360Options;
use crate::model::{ModelOptions, Variant, DEFAULT_EMBEDDING_SIZE};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub embedding_size: usize,
    pub seed: u64,
    /// Days per truncated-backpropagation window; one optimizer step per window.
    pub bptt_window: usize,
    pub topics_reinit_daily: bool,
    pub separate_head_weights: bool,
    pub variant: Variant,
    pub grad_clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub normalize_features: bool,
    pub standardize_features: bool,
    pub standardize_labels: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 300,
            dropout: 0.1,
            embedding_size: DEFAULT_EMBEDDING_SIZE,
            seed: 0,
            bptt_window: 60,
            topics_reinit_daily: false,
            separate_head_weights: false,
            variant: Variant::Full,
            grad_clip_norm: 5.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            normalize_features: true,
            standardize_features: false,
            standardize_labels: false,
        }
    }
}

pub const CONFIG_KEYS: [&str; 16] = [
    "learning_rate",
    "epochs",
    "dropout",
    "embedding_size",
    "seed",
    "bptt_window",
    "topics_reinit_daily",
    "separate_head_weights",
    "variant",
    "grad_clip_norm",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "normalize_features",
    "standardize_features",
    "standardize_labels",
];

fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T, TrainingError> {
    raw.parse()
        .map_err(|_| TrainingError::Config(format!("invalid value {raw:?} for {key}")))
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |msg: &str| Err(TrainingError::Config(msg.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.bptt_window < 1 {
            return bad("bptt_window must be at least 1");
        }
        if self.embedding_size < 1 {
            return bad("embedding_size must be at least 1");
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return bad("grad_clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon must be positive");
        }
        Ok(())
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            variant: self.variant,
            topics_reinit_daily: self.topics_reinit_daily,
        }
    }

    pub fn alpha360_options(&self) -> Alpha360Options {
        Alpha360Options {
            normalize: self.normalize_features,
            standardize_features: self.standardize_features,
            standardize_labels: self.standardize_labels,
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), TrainingError> {
        match key {
            "learning_rate" => self.learning_rate = parse(key, raw)?,
            "epochs" => self.epochs = parse(key, raw)?,
            "dropout" => self.dropout = parse(key, raw)?,
            "embedding_size" => self.embedding_size = parse(key, raw)?,
            "seed" => self.seed = parse(key, raw)?,
            "bptt_window" => self.bptt_window = parse(key, raw)?,
            "topics_reinit_daily" => self.topics_reinit_daily = parse(key, raw)?,
            "separate_head_weights" => self.separate_head_weights = parse(key, raw)?,
            "variant" => {
                self.variant = match raw {
                    "full" => Variant::Full,
                    "plain_lstm" => Variant::PlainLstm,
                    _ => {
                        return Err(TrainingError::Config(format!(
                            "variant must be full or plain_lstm, got {raw:?}"
                        )))
                    }
                }
            }
            "grad_clip_norm" => self.grad_clip_norm = parse(key, raw)?,
            "adam_beta1" => self.adam_beta1 = parse(key, raw)?,
            "adam_beta2" => self.adam_beta2 = parse(key, raw)?,
            "adam_epsilon" => self.adam_epsilon = parse(key, raw)?,
            "normalize_features" => self.normalize_features = parse(key, raw)?,
            "standardize_features" => self.standardize_features = parse(key, raw)?,
            "standardize_labels" => self.standardize_labels = parse(key, raw)?,
            _ => return Err(TrainingError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a flat `key = value` file over the defaults. Blank lines and `#`
    /// comments are ignored; unknown keys are rejected.
    pub fn parse_str(text: &str) -> Result<Self, TrainingError> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<(), TrainingError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TrainingError::Config(format!("line {}: expected key = value", i + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key));
        }
        s
    }

    pub fn get(&self, key: &str) -> String {
        match key {
            "learning_rate" => self.learning_rate.to_string(),
            "epochs" => self.epochs.to_string(),
            "dropout" => self.dropout.to_string(),
            "embedding_size" => self.embedding_size.to_string(),
            "seed" => self.seed.to_string(),
            "bptt_window" => self.bptt_window.to_string(),
            "topics_reinit_daily" => self.topics_reinit_daily.to_string(),
            "separate_head_weights" => self.separate_head_weights.to_string(),
            "variant" => match self.variant {
                Variant::Full => "full".into(),
                Variant::PlainLstm => "plain_lstm".into(),
            },
            "grad_clip_norm" => self.grad_clip_norm.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_epsilon" => self.adam_epsilon.to_string(),
            "normalize_features" => self.normalize_features.to_string(),
            "standardize_features" => self.standardize_features.to_string(),
            "standardize_labels" => self.standardize_labels.to_string(),
            _ => String::new(),
        }
    }
}
