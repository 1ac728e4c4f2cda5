use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::loss::{LossConfig, LrSchedule};
use super::optim::OptimizerConfig;
use crate::decoder::SearchStrategy;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Minimum caption-token frequency for the vocabulary.
    pub min_count: usize,
    /// Use only the first N training samples; 0 keeps all.
    pub train_limit: usize,
    /// Dev samples decoded per epoch for BLEU-4; 0 keeps all.
    pub dev_limit: usize,
    /// Joint gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    /// Write `epoch_NNN.ckpt` every this many epochs; 0 writes only best and last.
    pub checkpoint_every: usize,
    /// Precomputed feature file keyed by image path; empty means encode images.
    pub features: String,
    /// Dataset directory the run was trained on; recorded by `train`.
    pub data: String,
    pub search: SearchStrategy,
    pub optimizer: OptimizerConfig,
    pub lr: LrSchedule,
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            epochs: 60,
            batch_size: 32,
            min_count: 1,
            train_limit: 0,
            dev_limit: 0,
            grad_clip: 0.0,
            checkpoint_every: 1,
            features: String::new(),
            data: String::new(),
            search: SearchStrategy::Greedy,
            optimizer: OptimizerConfig::default(),
            lr: LrSchedule::default(),
            loss: LossConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.min_count == 0 {
            return Err(Error::config("epochs, batch_size and min_count must be positive"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::config("grad_clip must be non-negative"));
        }
        self.optimizer.validate()?;
        self.lr.validate()?;
        self.loss.validate()?;
        self.model.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serialises")
    }

    /// Applies `key=value` overrides with dotted keys. Keys must already
    /// exist in the schema.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let cfg = apply_overrides(self, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Round-trips `cfg` through TOML with `key=value` overrides applied.
pub fn apply_overrides<T, S>(cfg: &T, overrides: &[S]) -> Result<T>
where
    T: Serialize + DeserializeOwned,
    S: AsRef<str>,
{
    let mut value = toml::Value::try_from(cfg).map_err(|e| Error::config(e.to_string()))?;
    for o in overrides {
        let (k, v) = o
            .as_ref()
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{}` is not key=value", o.as_ref())))?;
        set_key(&mut value, k.trim(), v.trim())?;
    }
    value.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))
}

/// Replaces the value at dotted `key`, parsing `raw` as a TOML value when
/// possible and as a bare string otherwise.
pub fn set_key(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let unknown = || Error::config(format!("unknown configuration key `{key}`"));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        node = node.get_mut(*p).ok_or_else(unknown)?;
    }
    let slot = node
        .as_table_mut()
        .and_then(|t| t.get_mut(*parts.last().unwrap()))
        .ok_or_else(unknown)?;
    let parsed = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"));
    *slot = match (&*slot, parsed) {
        (toml::Value::String(_), Some(toml::Value::String(s))) => toml::Value::String(s),
        (toml::Value::String(_), _) => toml::Value::String(raw.to_string()),
        (toml::Value::Float(_), Some(toml::Value::Integer(i))) => toml::Value::Float(i as f64),
        (_, Some(v)) => v,
        (_, None) => toml::Value::String(raw.to_string()),
    };
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::AlphaMode;

    #[test]
    fn defaults_round_trip() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let c = TrainConfig::default()
            .with_overrides(&["epochs=3", "lr.initial=1", "loss.alpha_mode=linear_int(0.9)", "loss.sg_mode=diff"])
            .unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.lr.initial, 1.0);
        assert_eq!(c.loss.alpha_mode, AlphaMode::LinearInt(0.9));
        assert!(TrainConfig::default().with_overrides(&["nope=1"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["loss.nope=1"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["epochs"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["loss.alpha_mode=linear_int(2)"]).is_err());
    }

    #[test]
    fn unknown_file_keys_fail() {
        assert!(TrainConfig::from_toml("epochs = 2\nmystery = 1\n").is_err());
    }
}
