use serde::{Deserialize, Serialize};

/// Hyperparameters for the selector, reader and training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Token embedding width.
    pub d1: usize,
    /// Hidden width of everything after the bi-attention layer.
    pub d2: usize,
    /// Number of fusion blocks.
    pub hops: usize,
    /// Paragraph selection threshold.
    pub eta: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub lambda_mask: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dropout_lstm: f64,
    pub dropout_gat: f64,
    pub max_nodes: usize,
    pub max_span: usize,
    pub max_seq_len: usize,
    /// Examples per optimizer step.
    pub batch_size: usize,
    pub selector_dim: usize,
    pub selector_epochs: usize,
    pub selector_lr: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            d1: 64,
            d2: 64,
            hops: 2,
            eta: 0.1,
            lambda_s: 1.0,
            lambda_t: 1.0,
            lambda_mask: 1.0,
            lr: 1e-4,
            epochs: 20,
            seed: 0,
            dropout_lstm: 0.3,
            dropout_gat: 0.5,
            max_nodes: 40,
            max_span: 15,
            max_seq_len: 512,
            batch_size: 1,
            selector_dim: 32,
            selector_epochs: 2,
            selector_lr: 2e-3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.d1 < 2 || self.d1 % 2 != 0 {
            return bad("d1 must be an even number >= 2");
        }
        if self.d2 == 0 {
            return bad("d2 must be positive");
        }
        if self.hops == 0 {
            return bad("hops must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad("eta must lie in [0, 1]");
        }
        if [self.lambda_s, self.lambda_t, self.lambda_mask].iter().any(|&l| l < 0.0 || !l.is_finite()) {
            return bad("loss weights must be non-negative");
        }
        if !(self.lr > 0.0) || !(self.selector_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_lstm) || !(0.0..1.0).contains(&self.dropout_gat) {
            return bad("dropout rates must lie in [0, 1)");
        }
        if self.max_nodes == 0 || self.max_span == 0 || self.max_seq_len < 3 {
            return bad("max_nodes, max_span and max_seq_len must be positive");
        }
        if self.batch_size == 0 || self.selector_dim == 0 {
            return bad("batch_size and selector_dim must be positive");
        }
        Ok(())
    }

    /// Parses TOML, or JSON when the text starts with `{`. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
