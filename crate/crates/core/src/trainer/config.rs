//! Training configuration: a TOML document with one table per concern.
//!
//! Precedence is `--set` overrides, then the file, then built-in defaults.
//! Unknown keys are rejected at every level.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{generate, load_dataset, AssetLibrary, DatasetConfig, DatasetItem};
use crate::image::ImageTensor;
use crate::inpainter::PretrainConfig;
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::{Error, Result};

/// Generated held-out scenes start this far from the training seeds.
pub const HELD_OUT_SEED_OFFSET: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimConfig {
    pub fn adam(&self) -> objman_tensor::optim::AdamConfig {
        objman_tensor::optim::AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Adversarial warm-up steps (segmentation against inpainter only).
    pub warmup_steps: usize,
    /// Joint steps on the full objective.
    pub joint_steps: usize,
    pub batch_size: usize,
    /// Min-player steps per inpainter step.
    pub update_ratio: usize,
    /// Metrics row every this many steps (phases 2 and 3).
    pub log_interval: usize,
    /// Checkpoint every this many global steps; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    /// Pretrained inpainter checkpoint; when set, phase 1 is skipped.
    pub inpainter_checkpoint: Option<String>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 5000,
            joint_steps: 40000,
            batch_size: 16,
            update_ratio: 1,
            log_interval: 10,
            checkpoint_interval: 1000,
            inpainter_checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory containing `manifest.json`. When unset, training
    /// scenes are generated from `generator`.
    pub dir: Option<String>,
    /// Asset library root, required by the animals family.
    pub assets: Option<String>,
    /// Number of generated training scenes.
    pub count: usize,
    pub generator: DatasetConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { dir: None, assets: None, count: 2000, generator: DatasetConfig::default() }
    }
}

impl DataConfig {
    pub fn asset_library(&self) -> Result<Option<AssetLibrary>> {
        self.assets.as_ref().map(|p| AssetLibrary::load(Path::new(p))).transpose()
    }

    /// Scenes `seed + first .. seed + first + count` of the configured generator.
    pub fn generate_items(&self, seed: u64, first: u64, count: usize) -> Result<Vec<DatasetItem>> {
        let assets = self.asset_library()?;
        (0..count as u64)
            .map(|i| {
                let s = seed.wrapping_add(first + i);
                let (image, gt, spec) = generate(s, &self.generator, assets.as_ref())?;
                Ok(DatasetItem { id: format!("{:06}", first + i), image, gt, spec })
            })
            .collect()
    }

    /// Training images: the dataset directory when set, generated scenes otherwise.
    pub fn training_images(&self, seed: u64) -> Result<Vec<ImageTensor>> {
        match &self.dir {
            Some(dir) => Ok(load_dataset(Path::new(dir))?.into_iter().map(|it| it.image).collect()),
            None => Ok(self.generate_items(seed, 0, self.count)?.into_iter().map(|it| it.image).collect()),
        }
    }

    /// Held-out scenes, drawn from a seed range disjoint from training.
    pub fn held_out_items(&self, seed: u64, count: usize) -> Result<Vec<DatasetItem>> {
        self.generate_items(seed, HELD_OUT_SEED_OFFSET, count)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub schedule: ScheduleConfig,
    pub pretrain: PretrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            schedule: ScheduleConfig::default(),
            pretrain: PretrainConfig::default(),
        }
    }
}

/// Named override bundles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Information-bottleneck sum only: `γ = η = 0`.
    MonetLike,
    /// No cycle-consistency: `η = 0`.
    NoPc,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monet-like" => Ok(Self::MonetLike),
            "no-pc" => Ok(Self::NoPc),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected monet-like or no-pc)"))),
        }
    }
}

impl Preset {
    pub fn overrides(self) -> &'static [&'static str] {
        match self {
            Self::MonetLike => &["loss.gamma=0", "loss.eta=0"],
            Self::NoPc => &["loss.eta=0"],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.generator.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.pretrain.validate()?;
        let s = &self.schedule;
        if s.batch_size == 0 {
            return Err(Error::Config("schedule.batch_size must be at least 1".into()));
        }
        if s.update_ratio == 0 {
            return Err(Error::Config("schedule.update_ratio must be at least 1".into()));
        }
        if s.log_interval == 0 {
            return Err(Error::Config("schedule.log_interval must be at least 1".into()));
        }
        let o = &self.optim;
        if !(o.lr >= 0.0 && o.eps > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        Ok(())
    }

    /// Effective number of inpainter pretraining steps.
    pub fn pretrain_steps(&self) -> usize {
        if self.schedule.inpainter_checkpoint.is_some() {
            0
        } else {
            self.pretrain.steps
        }
    }

    pub fn total_steps(&self) -> usize {
        self.pretrain_steps() + self.schedule.warmup_steps + self.schedule.joint_steps
    }

    /// Parses a TOML document and applies `key=value` overrides (dotted keys).
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    /// Fully resolved TOML with every key present.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Hex SHA-256 of the resolved TOML.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// Sets `a.b.c = value` in `table`; the value is parsed as TOML, falling back to a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = parse_value(raw);
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("invalid override key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{key}`: `{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = TrainConfig::default();
        let back = TrainConfig::from_toml_with_overrides(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.optim, OptimConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 });
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = "seed = 3\n[loss]\ngamma = 5.0\n";
        let cfg = TrainConfig::from_toml_with_overrides(file, &["loss.gamma=7".into()]).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.loss.gamma, 7.0);
        assert_eq!(cfg.loss.eta, LossConfig::default().eta);
        let cfg = TrainConfig::from_toml_with_overrides(file, &[]).unwrap();
        assert_eq!(cfg.loss.gamma, 5.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(TrainConfig::from_toml_with_overrides("[loss]\ngama = 1.0\n", &[]).is_err());
        assert!(TrainConfig::from_toml_with_overrides("", &["nope.x=1".into()]).is_err());
        assert!(TrainConfig::from_toml_with_overrides("", &["seed".into()]).is_err());
    }

    #[test]
    fn string_overrides_fall_back_to_strings() {
        let cfg = TrainConfig::from_toml_with_overrides("", &["data.dir=some/where".into()]).unwrap();
        assert_eq!(cfg.data.dir.as_deref(), Some("some/where"));
    }

    #[test]
    fn presets() {
        let mut cfg = TrainConfig::default();
        for o in "monet-like".parse::<Preset>().unwrap().overrides() {
            let mut t: toml::Table = cfg.to_toml().parse().unwrap();
            apply_override(&mut t, o).unwrap();
            cfg = toml::Value::Table(t).try_into().unwrap();
        }
        assert_eq!((cfg.loss.gamma, cfg.loss.eta), (0.0, 0.0));
        assert!("other".parse::<Preset>().is_err());
    }
}
