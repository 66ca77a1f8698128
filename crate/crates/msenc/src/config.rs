//! Training run configuration: named presets, JSON config files, and flag
//! overrides, resolved in that order of increasing precedence.

use std::path::{Path, PathBuf};

use msenc_core::train::{LossMask, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::container;
use crate::error::{Error, Result};

pub const TRAIN_PRESETS: [&str; 3] = ["phase1", "phase2", "phase1-desk"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMaskSetting {
    None,
    SubjectValid,
}

impl From<LossMaskSetting> for LossMask {
    fn from(m: LossMaskSetting) -> Self {
        match m {
            LossMaskSetting::None => LossMask::None,
            LossMaskSetting::SubjectValid => LossMask::SubjectValid,
        }
    }
}

/// Everything that determines a training run's numbers. Serialized as the
/// `config.json` echo and accepted back through `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub preset: String,
    pub optimizer: String,
    pub schedule: String,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_norm: bool,
    pub feature_dropout: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub min_lr: f64,
    pub seed: u64,
    pub eval_interval: usize,
    pub loss_mask: LossMaskSetting,
    pub freeze_shared: bool,
    pub latent_dim: usize,
    pub init_seed: u64,
    pub split_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
}

impl TrainSettings {
    pub fn preset(name: &str) -> Result<Self> {
        let (cfg, latent_dim) = match name {
            "phase1" => (TrainConfig::phase1(), 1024),
            "phase2" => (TrainConfig::phase2(), 1024),
            "phase1-desk" => (TrainConfig::phase1_desk(), 32),
            other => {
                return Err(Error::Usage(format!(
                    "unknown preset {other:?} (expected one of {})",
                    TRAIN_PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            preset: name.into(),
            optimizer: "adamw".into(),
            schedule: "warmup_cosine".into(),
            batch_size: cfg.batch_size,
            peak_lr: cfg.peak_lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            decay_norm: cfg.decay_norm,
            feature_dropout: cfg.feature_dropout,
            total_steps: cfg.total_steps,
            warmup_steps: cfg.warmup_steps,
            min_lr: cfg.min_lr,
            seed: cfg.seed,
            eval_interval: cfg.eval_interval,
            loss_mask: LossMaskSetting::None,
            freeze_shared: cfg.freeze_shared,
            latent_dim,
            init_seed: 0,
            split_seed: 0,
            data: None,
            pca: None,
            init: None,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        if self.optimizer != "adamw" || self.schedule != "warmup_cosine" {
            return Err(Error::Usage(
                "only optimizer \"adamw\" with schedule \"warmup_cosine\" is available".into(),
            ));
        }
        if self.latent_dim == 0 {
            return Err(Error::Usage("latent_dim must be positive".into()));
        }
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            peak_lr: self.peak_lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            decay_norm: self.decay_norm,
            feature_dropout: self.feature_dropout,
            total_steps: self.total_steps,
            warmup_steps: self.warmup_steps,
            min_lr: self.min_lr,
            seed: self.seed,
            eval_interval: self.eval_interval,
            loss_mask: self.loss_mask.into(),
            freeze_shared: self.freeze_shared,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Preset defaults, then `file`, then `overrides`. The preset is taken
    /// from the overrides, else the file, else `phase1`.
    pub fn resolve(file: Option<&Path>, overrides: Map<String, Value>) -> Result<Self> {
        let from_file = match file {
            Some(p) => match container::read_json::<Value>(p)? {
                Value::Object(m) => m,
                _ => return Err(Error::Usage(format!("{} must hold a JSON object", p.display()))),
            },
            None => Map::new(),
        };
        let name = overrides
            .get("preset")
            .or_else(|| from_file.get("preset"))
            .and_then(Value::as_str)
            .unwrap_or("phase1")
            .to_string();
        let mut merged = match serde_json::to_value(Self::preset(&name)?) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("settings serialize to an object"),
        };
        merged.extend(from_file);
        merged.extend(overrides);
        merged.insert("preset".into(), Value::String(name));
        serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Usage(format!("invalid configuration: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn map(v: Value) -> Map<String, Value> {
        match v {
            Value::Object(m) => m,
            _ => panic!("not an object"),
        }
    }

    #[test]
    fn flags_beat_file_beat_preset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"preset": "phase2", "batch_size": 7, "seed": 3}"#).unwrap();
        let s = TrainSettings::resolve(Some(&path), map(json!({"seed": 5}))).unwrap();
        assert_eq!(s.preset, "phase2");
        assert_eq!(s.batch_size, 7);
        assert_eq!(s.seed, 5);
        assert_eq!(s.total_steps, 2000);
    }

    #[test]
    fn echo_resolves_to_itself() {
        let mut s = TrainSettings::preset("phase1-desk").unwrap();
        s.data = Some("d".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        container::write_json(&path, &s).unwrap();
        assert_eq!(TrainSettings::resolve(Some(&path), Map::new()).unwrap(), s);
    }

    #[test]
    fn unknown_keys_and_presets_are_usage_errors() {
        assert!(matches!(
            TrainSettings::resolve(None, map(json!({"learning_rate": 1.0}))),
            Err(Error::Usage(_))
        ));
        assert!(matches!(TrainSettings::preset("phase3"), Err(Error::Usage(_))));
    }

    #[test]
    fn presets_validate() {
        for name in TRAIN_PRESETS {
            TrainSettings::preset(name).unwrap().train_config().unwrap();
        }
    }
}
