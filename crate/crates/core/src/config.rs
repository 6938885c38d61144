//! Hyperparameters and run configuration.
//!
//! Config files are flat `key = value` TOML. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::LOW_AGREEMENT_THRESHOLD;
use crate::policy::{DEFAULT_C_MIN, DEFAULT_U_MAX_FRAC};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Weight of the confidence penalty on wrong answers.
    pub alpha: f64,
    /// Weight of the cross-entropy term.
    pub beta: f64,
    /// Contrastive hinge margin.
    pub margin_m: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// WMD threshold for positives.
    pub delta: f64,
    /// Confidence threshold for overconfident negatives.
    pub tau1: f64,
    /// Entropy threshold (nats) for overconfident negatives.
    pub tau2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub projection_dim: usize,
    /// Positives must also match the gold id, not only pass the WMD test.
    pub strict_alignment: bool,
    /// Any correct record supplies a positive, regardless of WMD.
    pub use_gold_positive: bool,
    /// Pick the negative most cosine-similar to the anchor instead of sampling.
    pub hard_negatives: bool,
    /// Train the temperature scaler alongside the projection head.
    pub calibrate_temperature: bool,
    pub c_min: f64,
    pub u_max_frac: f64,
    pub iou_threshold: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            margin_m: 0.3,
            lambda1: 1.0,
            lambda2: 0.7,
            delta: 0.4,
            tau1: 0.8,
            tau2: 0.5,
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            projection_dim: 64,
            strict_alignment: true,
            use_gold_positive: false,
            hard_negatives: false,
            calibrate_temperature: true,
            c_min: DEFAULT_C_MIN,
            u_max_frac: DEFAULT_U_MAX_FRAC,
            iou_threshold: LOW_AGREEMENT_THRESHOLD,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let non_negative = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("margin_m", self.margin_m),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("delta", self.delta),
            ("tau2", self.tau2),
            ("learning_rate", self.learning_rate),
            ("u_max_frac", self.u_max_frac),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid {
                    key,
                    reason: format!("{v} is not a finite non-negative number"),
                });
            }
        }
        let unit = [
            ("tau1", self.tau1),
            ("c_min", self.c_min),
            ("iou_threshold", self.iou_threshold),
        ];
        for (key, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid {
                    key,
                    reason: format!("{v} is outside [0, 1]"),
                });
            }
        }
        if self.projection_dim < 2 {
            return Err(ConfigError::Invalid {
                key: "projection_dim",
                reason: "must be at least 2".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid {
                key: "batch_size",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

/// Hyperparameters plus file locations. In a config file every key sits at
/// the top level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: Hyperparams,
    pub input: Option<String>,
    pub output: Option<String>,
    pub checkpoint: Option<String>,
    pub loss_history: Option<String>,
    pub format: ReportFormat,
}

const PATH_KEYS: [&str; 5] = ["input", "output", "checkpoint", "loss_history", "format"];

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut take_str = |key: &'static str| -> Result<Option<String>, ConfigError> {
            match table.remove(key) {
                None => Ok(None),
                Some(toml::Value::String(s)) if !s.is_empty() => Ok(Some(s)),
                Some(other) => Err(ConfigError::Invalid {
                    key,
                    reason: format!("expected a non-empty string, got {other}"),
                }),
            }
        };
        let input = take_str("input")?;
        let output = take_str("output")?;
        let checkpoint = take_str("checkpoint")?;
        let loss_history = take_str("loss_history")?;
        let format = match take_str("format")?.as_deref() {
            None | Some("json") => ReportFormat::Json,
            Some("csv") => ReportFormat::Csv,
            Some(other) => {
                return Err(ConfigError::Invalid {
                    key: "format",
                    reason: format!("unknown format {other:?}"),
                })
            }
        };
        let params: Hyperparams = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        params.validate()?;
        Ok(Self {
            params,
            input,
            output,
            checkpoint,
            loss_history,
            format,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    /// Flat `key = value` rendering accepted by [`RunConfig::from_toml_str`].
    pub fn to_toml_string(&self) -> String {
        let mut table = match toml::Value::try_from(&self.params).expect("params serialize") {
            toml::Value::Table(t) => t,
            _ => unreachable!("params serialize to a table"),
        };
        let paths = [
            ("input", &self.input),
            ("output", &self.output),
            ("checkpoint", &self.checkpoint),
            ("loss_history", &self.loss_history),
        ];
        for (key, value) in paths {
            if let Some(v) = value {
                table.insert(key.into(), toml::Value::String(v.clone()));
            }
        }
        let format = match self.format {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        };
        table.insert(PATH_KEYS[4].into(), toml::Value::String(format.into()));
        toml::to_string(&table).expect("flat table serializes")
    }
}
