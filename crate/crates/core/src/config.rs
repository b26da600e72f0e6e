//! Run configuration: hyperparameters, ablation switches, paths and seed.
//!
//! Config files are flat TOML documents. The canonical form embedded in
//! checkpoints is the JSON serialization, whose field order is fixed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Field { field: &'static str, message: String },
    #[error("config: {0}")]
    Syntax(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        message: message.into(),
    }
}

/// Component removed for an ablation run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Every token uses one shared indicator row.
    Indicator,
    /// Decay exponent forced to 0, so every weight is 1.
    Decay,
    /// Sentence vector is the unweighted mean of the decayed states.
    Attention,
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "indicator" | "no_aspect_indicator" => Ok(Ablation::Indicator),
            "decay" | "no_decay" => Ok(Ablation::Decay),
            "attention" | "no_structured_attention" => Ok(Ablation::Attention),
            other => Err(format!("unknown ablation `{other}` (indicator|decay|attention)")),
        }
    }
}

/// Dev metric used for model selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    Accuracy,
    MacroF1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hidden: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub aspect_dim: usize,
    pub gamma: u32,
    pub gru_layers: usize,
    pub crf_heads: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub word_dim: usize,
    pub grad_clip: f64,
    pub no_aspect_indicator: bool,
    pub no_decay: bool,
    pub no_structured_attention: bool,
    pub embeddings_trainable: bool,
    pub shared_transitions: bool,
    pub selection_metric: SelectionMetric,
    /// Write wall-clock seconds into the epoch log; off gives byte-stable logs.
    pub record_wall_time: bool,
    pub train_path: Option<String>,
    /// When absent, a sixth of the training file is held out.
    pub dev_path: Option<String>,
    pub test_path: Option<String>,
    pub embeddings_path: Option<String>,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            batch_size: 64,
            dropout: 0.5,
            aspect_dim: 50,
            gamma: 2,
            gru_layers: 1,
            crf_heads: 4,
            learning_rate: 0.008,
            max_epochs: 100,
            patience: 10,
            seed: 1,
            word_dim: 300,
            grad_clip: 5.0,
            no_aspect_indicator: false,
            no_decay: false,
            no_structured_attention: false,
            embeddings_trainable: true,
            shared_transitions: false,
            selection_metric: SelectionMetric::Accuracy,
            record_wall_time: true,
            train_path: None,
            dev_path: None,
            test_path: None,
            embeddings_path: None,
            output_dir: "runs".to_string(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Canonical JSON used in checkpoints and digests.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_canonical_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short hex digest of the canonical form.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let h = Sha256::digest(self.canonical_json().as_bytes());
        h.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn ablation(&self) -> Option<Ablation> {
        if self.no_aspect_indicator {
            Some(Ablation::Indicator)
        } else if self.no_decay {
            Some(Ablation::Decay)
        } else if self.no_structured_attention {
            Some(Ablation::Attention)
        } else {
            None
        }
    }

    /// Copy of `self` with exactly one ablation switched on.
    pub fn with_ablation(&self, ablation: Ablation) -> Result<Self, ConfigError> {
        if self.ablation().is_some() {
            return Err(field("ablation", "an ablation is already set; one at a time"));
        }
        let mut cfg = self.clone();
        match ablation {
            Ablation::Indicator => cfg.no_aspect_indicator = true,
            Ablation::Decay => cfg.no_decay = true,
            Ablation::Attention => cfg.no_structured_attention = true,
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Decay exponent after ablation.
    pub fn effective_gamma(&self) -> u32 {
        if self.no_decay {
            0
        } else {
            self.gamma
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if ![32, 64].contains(&self.hidden) {
            return Err(field("hidden", format!("{} not in {{32, 64}}", self.hidden)));
        }
        if ![64, 96].contains(&self.batch_size) {
            return Err(field("batch_size", format!("{} not in {{64, 96}}", self.batch_size)));
        }
        let tenths = self.dropout * 10.0;
        if !(3.0 - 1e-9..=8.0 + 1e-9).contains(&tenths) || (tenths - tenths.round()).abs() > 1e-9 {
            return Err(field("dropout", format!("{} not in 0.3..=0.8 step 0.1", self.dropout)));
        }
        if ![50, 70, 90].contains(&self.aspect_dim) {
            return Err(field("aspect_dim", format!("{} not in {{50, 70, 90}}", self.aspect_dim)));
        }
        if self.gamma > 3 {
            return Err(field("gamma", format!("{} not in {{0, 1, 2, 3}}", self.gamma)));
        }
        if !(1..=3).contains(&self.gru_layers) {
            return Err(field("gru_layers", format!("{} not in {{1, 2, 3}}", self.gru_layers)));
        }
        if self.crf_heads == 0 {
            return Err(field("crf_heads", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(field("learning_rate", format!("{} must be finite and >= 0", self.learning_rate)));
        }
        if self.max_epochs == 0 {
            return Err(field("max_epochs", "must be at least 1"));
        }
        if self.word_dim == 0 {
            return Err(field("word_dim", "must be at least 1"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(field("grad_clip", format!("{} must be > 0", self.grad_clip)));
        }
        let flags = [self.no_aspect_indicator, self.no_decay, self.no_structured_attention];
        if flags.iter().filter(|&&f| f).count() > 1 {
            return Err(field("ablation", "at most one of no_aspect_indicator, no_decay, no_structured_attention"));
        }
        Ok(())
    }
}
