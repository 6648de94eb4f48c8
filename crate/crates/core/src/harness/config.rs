use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::languages::{DatasetSizes, LanguageSpec};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Initial learning rates are drawn log-uniformly from this range, once
    /// per restart.
    pub lr_min: f64,
    pub lr_max: f64,
    /// Global-norm gradient clipping threshold.
    pub clip: f64,
    pub batch_size: usize,
    pub lr_decay: f64,
    /// Epochs without validation improvement before each decay.
    pub decay_patience: usize,
    /// Epochs without validation improvement before stopping.
    pub stop_patience: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Wall-clock budget per restart; checked after each epoch.
    pub max_seconds: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr_min: 5e-4,
            lr_max: 1e-2,
            clip: 5.0,
            batch_size: 10,
            lr_decay: 0.9,
            decay_patience: 5,
            stop_patience: 10,
            max_epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_seconds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub language: LanguageSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub data: DatasetSizes,
}

fn default_restarts() -> usize {
    10
}

impl ExperimentConfig {
    pub fn new(model: ModelConfig, language: LanguageSpec) -> Self {
        ExperimentConfig {
            model,
            language,
            seed: 0,
            restarts: default_restarts(),
            training: TrainingConfig::default(),
            data: DatasetSizes::default(),
        }
    }

    /// Parse JSON; errors name the offending line and field.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config {
            field: format!("line {} column {}", e.line(), e.column()),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.language.validate()?;
        let t = &self.training;
        let bad = |field: &str, msg: &str| {
            Err(Error::Config {
                field: format!("training.{field}"),
                msg: msg.into(),
            })
        };
        if !(t.lr_min > 0.0 && t.lr_min <= t.lr_max && t.lr_max.is_finite()) {
            return bad("lr_min", "need 0 < lr_min <= lr_max");
        }
        if !(t.clip > 0.0) {
            return bad("clip", "must be positive");
        }
        if t.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(t.lr_decay > 0.0 && t.lr_decay <= 1.0) {
            return bad("lr_decay", "must be in (0, 1]");
        }
        if t.decay_patience == 0 || t.stop_patience == 0 {
            return bad("stop_patience", "patience must be positive");
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.eps > 0.0) {
            return bad("beta1", "Adam needs betas in [0, 1) and eps > 0");
        }
        if t.max_seconds.is_some_and(|m| !(m > 0.0)) {
            return bad("max_seconds", "must be positive");
        }
        if self.restarts == 0 {
            return Err(Error::Config {
                field: "restarts".into(),
                msg: "must be at least 1".into(),
            });
        }
        if self.data.train == 0 || self.data.validation == 0 {
            return Err(Error::Config {
                field: "data".into(),
                msg: "train and validation sets must be nonempty".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = ExperimentConfig::from_json(
            r#"{"model": {"kind": "rns", "states": 2, "symbols": 3},
                "language": {"kind": "marked-reverse", "k": 2}}"#,
        )
        .unwrap();
        assert_eq!(cfg.training, TrainingConfig::default());
        assert_eq!(cfg.training.clip, 5.0);
        assert_eq!(cfg.training.batch_size, 10);
        assert_eq!(cfg.restarts, 10);
        assert_eq!(cfg.data.train, 10_000);
        assert_eq!(cfg.model.label(), "RNS 2-3");
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let e = ExperimentConfig::from_json(
            "{\"model\": {\"kind\": \"lstm\"},\n \"language\": {\"kind\": \"dyck\"},\n \"trainig\": {}}",
        )
        .unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 3") && msg.contains("trainig"), "{msg}");
        let e = ExperimentConfig::from_json(
            r#"{"model": {"kind": "lstm"}, "language": {"kind": "dyck"}, "training": {"clip": -1}}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("training.clip"), "{e}");
    }
}
