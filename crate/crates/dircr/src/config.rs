//! Run configuration: defaults < config file (TOML or JSON) < `--set` dotted
//! overrides. Unknown keys are hard errors so typos never silently fall back
//! to defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DircrError, Result};
use crate::model::ModelArch;

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainSection,
    pub model: ModelSection,
    pub rclm: ProjectionConfig,
    pub data: DataSection,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub k: usize,
    pub use_local: bool,
    pub use_global: bool,
    pub use_rclm: bool,
    pub warmup_epochs: usize,
    /// Strict two-phase schedule: pseudo-labels come from a frozen copy of
    /// the model taken at the end of warmup instead of the live model.
    pub two_phase: bool,
    /// Stop once validation accuracy reaches this fraction.
    pub stop_accuracy: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 1e-3,
            weight_decay: 1e-5,
            batch_size: 128,
            epochs: 30,
            seed: 0,
            k: 3,
            use_local: true,
            use_global: true,
            use_rclm: true,
            warmup_epochs: 3,
            two_phase: false,
            stop_accuracy: None,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub image_size: u32,
    pub channels: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    /// Attention token dimension; defaults to `channels` when absent.
    pub attn_dim: Option<usize>,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            image_size: 80,
            channels: 64,
            n_blocks: 4,
            n_heads: 4,
            attn_dim: None,
            dropout: 0.1,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub out_dim: usize,
    pub temperature: f64,
    pub confidence_threshold: f64,
    pub loss_weight: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            out_dim: 128,
            temperature: 0.2,
            confidence_threshold: 0.60,
            loss_weight: 0.1,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset base path (the generator writes `{base}.bin` + `{base}.json`).
    pub train_path: String,
    pub val_path: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainSection::default(),
            model: ModelSection::default(),
            rclm: ProjectionConfig::default(),
            data: DataSection::default(),
        }
    }
}

impl RunConfig {
    /// Desk-scale preset: 32x32 panels, half-width model, batch 32. Intended
    /// for CPU-sized experiments; the struct default keeps full-scale values.
    pub fn desk() -> Self {
        let mut cfg = RunConfig::default();
        cfg.model.image_size = 32;
        cfg.model.channels = 32;
        cfg.train.batch_size = 32;
        cfg
    }

    pub fn arch(&self) -> ModelArch {
        ModelArch {
            image_size: self.model.image_size as usize,
            channels: self.model.channels,
            n_blocks: self.model.n_blocks,
            k: self.train.k,
            n_heads: self.model.n_heads,
            attn_dim: self.model.attn_dim.unwrap_or(self.model.channels),
            dropout: self.model.dropout,
            use_local: self.train.use_local,
            use_global: self.train.use_global,
            use_rclm: self.train.use_rclm,
            proj_dim: self.rclm.out_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(DircrError::Config(m));
        if !(self.train.lr > 0.0) {
            return err(format!("train.lr must be positive, got {}", self.train.lr));
        }
        if self.train.weight_decay < 0.0 {
            return err("train.weight_decay must be non-negative".into());
        }
        if self.train.batch_size == 0 {
            return err("train.batch_size must be at least 1".into());
        }
        if self.train.epochs == 0 {
            return err("train.epochs must be at least 1".into());
        }
        if let Some(a) = self.train.stop_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return err(format!("train.stop_accuracy {a} outside [0, 1]"));
            }
        }
        if !(self.rclm.temperature > 0.0) {
            return err("rclm.temperature must be positive".into());
        }
        if self.rclm.confidence_threshold <= 0.125 || self.rclm.confidence_threshold > 1.0 {
            return err(format!(
                "rclm.confidence_threshold {} outside (0.125, 1]",
                self.rclm.confidence_threshold
            ));
        }
        if self.rclm.loss_weight < 0.0 {
            return err("rclm.loss_weight must be non-negative".into());
        }
        if self.rclm.out_dim == 0 {
            return err("rclm.out_dim must be at least 1".into());
        }
        self.arch().validate()
    }

    /// The resolved configuration as TOML, written next to run artifacts.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// This config with dotted `key=value` overrides applied and re-validated.
    pub fn with_overrides(&self, sets: &[String]) -> Result<RunConfig> {
        let mut root = toml::Value::try_from(self)
            .map_err(|e| DircrError::Config(format!("config: {e}")))?;
        for s in sets {
            apply_set(&mut root, s)?;
        }
        let cfg: RunConfig = root
            .try_into()
            .map_err(|e| DircrError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Loads defaults, merges an optional TOML/JSON file, then applies dotted
/// `key=value` overrides; validates the result.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut root = match path {
        None => toml::Value::Table(toml::map::Map::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let is_json = p
                .extension()
                .map(|e| e.eq_ignore_ascii_case("json"))
                .unwrap_or(false);
            if is_json {
                let j: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| DircrError::Config(format!("{}: {e}", p.display())))?;
                toml::Value::try_from(j)
                    .map_err(|e| DircrError::Config(format!("{}: {e}", p.display())))?
            } else {
                text.parse::<toml::Value>()
                    .map_err(|e| DircrError::Config(format!("{}: {e}", p.display())))?
            }
        }
    };
    for s in sets {
        apply_set(&mut root, s)?;
    }
    let cfg: RunConfig = root
        .try_into()
        .map_err(|e| DircrError::Config(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Applies one `a.b.c=value` override; the value parses as a TOML literal and
/// falls back to a string.
fn apply_set(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| DircrError::Config(format!("override '{spec}' is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(DircrError::Config(format!("override '{spec}' has an empty key")));
    }
    let value = parse_literal(raw.trim());
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| {
            DircrError::Config(format!("override '{key}': '{part}' is not a table"))
        })?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    unreachable!("split('.') yields at least one part")
}

fn parse_literal(raw: &str) -> toml::Value {
    if let Ok(doc) = format!("v = {raw}").parse::<toml::Value>() {
        if let Some(v) = doc.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}
