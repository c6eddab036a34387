//! Flat `key=value` configuration files.
//!
//! One entry per line, `#` starts a comment, later entries override earlier
//! ones. Command-line flags are applied on top with [`KvConfig::set`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::classifier::TrainConfig;
use crate::error::{Error, Result};
use crate::metrics::F1Average;
use crate::oversampling::{Aggregation, OversampleConfig};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

/// Keys read by [`oversample_config`].
pub const OVERSAMPLE_KEYS: &[&str] = &["m_v", "lambda", "d_t", "sim_t", "seed", "aggregation", "shuffle"];

/// Keys read by [`train_config`].
pub const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "hidden_size",
    "dropout",
    "train_seed",
    "shuffle_each_epoch",
];

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}: line {}: expected key=value", no + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("{origin}: line {}: empty key", no + 1)));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value for {key}: {v:?}"))),
        }
    }

    pub fn get_or<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<V: FromStr>(&self, key: &str) -> Result<V> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }

    /// Comma-separated list value.
    pub fn get_list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>> {
        let Some(raw) = self.entries.get(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("invalid list item for {key}: {s:?}")))
            })
            .collect::<Result<Vec<V>>>()
            .map(Some)
    }

    pub fn require_list<V: FromStr>(&self, key: &str) -> Result<Vec<V>> {
        self.get_list(key)?
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }

    /// Rejects keys outside `allowed` (prefix patterns end in `.`).
    pub fn check_known(&self, allowed: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            let ok = allowed
                .iter()
                .any(|a| a == key || (a.ends_with('.') && key.starts_with(a)));
            if !ok {
                return Err(Error::Config(format!("unknown configuration key {key:?}")));
            }
        }
        Ok(())
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean for {key}: {v:?}"))),
    }
}

pub fn get_bool(kv: &KvConfig, key: &str, default: bool) -> Result<bool> {
    kv.raw(key).map_or(Ok(default), |v| parse_bool(key, v))
}

pub fn oversample_config(kv: &KvConfig) -> Result<OversampleConfig> {
    let d = OversampleConfig::default();
    let cfg = OversampleConfig {
        minority_value: kv.require("m_v")?,
        lambda: kv.get_or("lambda", d.lambda)?,
        distance_threshold: kv.get_or("d_t", d.distance_threshold)?,
        similarity_threshold: kv.get_or("sim_t", d.similarity_threshold)?,
        seed: kv.get_or("seed", d.seed)?,
        aggregation: kv.get_or::<Aggregation>("aggregation", d.aggregation)?,
        shuffle: get_bool(kv, "shuffle", d.shuffle)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_config(kv: &KvConfig) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: kv.get_or("epochs", d.epochs)?,
        batch_size: kv.get_or("batch_size", d.batch_size)?,
        learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
        beta1: kv.get_or("beta1", d.beta1)?,
        beta2: kv.get_or("beta2", d.beta2)?,
        epsilon: kv.get_or("epsilon", d.epsilon)?,
        hidden_size: kv.get_or("hidden_size", d.hidden_size)?,
        dropout: kv.get_or("dropout", d.dropout)?,
        seed: kv.get_or("train_seed", d.seed)?,
        shuffle_each_epoch: get_bool(kv, "shuffle_each_epoch", d.shuffle_each_epoch)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn f1_average(kv: &KvConfig) -> Result<F1Average> {
    kv.get_or("f1_average", F1Average::Macro)
}
