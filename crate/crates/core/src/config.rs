//! Run configuration: a preset, optionally refined by a TOML file and then by
//! `section.key=value` overrides. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::RatioBucket;
use crate::error::{Result, SplError};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::teacher::TeacherEntry;
use crate::trainer::{DatasetProfile, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 64×64 images, narrow widths, stand-in teacher; runs on one CPU core.
    #[default]
    Desk,
    /// 256×256 images with the full widths.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    /// `"standin"` or the name of a `registry` entry.
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub registry: Vec<TeacherEntry>,
}

impl TeacherConfig {
    pub fn entry(&self) -> Option<&TeacherEntry> {
        self.registry.iter().find(|e| e.name == self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub image_size: usize,
    /// Directory of training images; synthetic scenes when absent.
    #[serde(default)]
    pub image_dir: Option<PathBuf>,
    pub synthetic_images: usize,
    pub synthetic_seed: u64,
    pub center_crop: bool,
    /// Value written into holes, in `[-1, 1]` units.
    pub fill: f32,
    /// Directory of training masks; generated when absent.
    #[serde(default)]
    pub mask_dir: Option<PathBuf>,
    pub train_masks: usize,
    pub mask_seed: u64,
    pub train_buckets: Vec<String>,
}

impl DataConfig {
    pub fn buckets(&self) -> Result<Vec<RatioBucket>> {
        self.train_buckets.iter().map(|l| RatioBucket::from_label(l)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub composite: bool,
    pub masks_per_bucket: usize,
    pub mask_seed: u64,
    pub pairing_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub teacher: TeacherConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl SplConfig {
    pub fn preset(preset: Preset) -> Self {
        let desk = SplConfig {
            preset,
            model: ModelConfig::desk(),
            teacher: TeacherConfig {
                name: "standin".into(),
                seed: 7,
                registry: Vec::new(),
            },
            loss: LossConfig::default(),
            train: TrainConfig::for_profile(DatasetProfile::Desk, 4),
            data: DataConfig {
                image_size: 64,
                image_dir: None,
                synthetic_images: 16,
                synthetic_seed: 0,
                center_crop: false,
                fill: crate::data::DEFAULT_FILL,
                mask_dir: None,
                train_masks: 64,
                mask_seed: 1,
                train_buckets: vec!["10%-20%".into(), "20%-30%".into()],
            },
            eval: EvalConfig {
                composite: true,
                masks_per_bucket: 8,
                mask_seed: 2,
                pairing_seed: 3,
            },
        };
        match preset {
            Preset::Desk => desk,
            Preset::Paper => SplConfig {
                model: ModelConfig::paper(),
                train: TrainConfig::for_profile(DatasetProfile::Places2, 8),
                data: DataConfig {
                    image_size: 256,
                    center_crop: true,
                    ..desk.data
                },
                ..desk
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.data.buckets()?;
        if self.data.image_size == 0 || self.data.image_size % 4 != 0 {
            return Err(SplError::Config(format!(
                "data.image_size must be a positive multiple of 4, got {}",
                self.data.image_size
            )));
        }
        if self.teacher.name != "standin" {
            let entry = self.teacher.entry().ok_or_else(|| {
                SplError::Config(format!("teacher {:?} is not in teacher.registry", self.teacher.name))
            })?;
            if entry.d != self.model.prior_channels {
                return Err(SplError::Config(format!(
                    "teacher {} has d = {} but model.prior_channels = {}",
                    entry.name, entry.d, self.model.prior_channels
                )));
            }
        }
        Ok(())
    }

    /// Resolves `preset → file → overrides`. The file may name its own
    /// preset; otherwise `default_preset` applies.
    pub fn resolve(file: Option<&str>, overrides: &[String], default_preset: Preset) -> Result<Self> {
        let file_table = match file {
            Some(text) => text
                .parse::<toml::Table>()
                .map_err(|e| SplError::Config(format!("config file: {e}")))?,
            None => toml::Table::new(),
        };
        let mut preset = match file_table.get("preset") {
            Some(v) => v
                .clone()
                .try_into::<Preset>()
                .map_err(|e| SplError::Config(format!("preset: {e}")))?,
            None => default_preset,
        };
        let parsed: Vec<(Vec<String>, toml::Value)> =
            overrides.iter().map(|o| parse_override(o)).collect::<Result<_>>()?;
        if let Some((_, v)) = parsed.iter().find(|(k, _)| k.len() == 1 && k[0] == "preset") {
            preset = v
                .clone()
                .try_into::<Preset>()
                .map_err(|e| SplError::Config(format!("preset: {e}")))?;
        }
        let base = toml::Table::try_from(SplConfig::preset(preset))
            .map_err(|e| SplError::Config(e.to_string()))?;
        let mut value = toml::Value::Table(base);
        merge(&mut value, toml::Value::Table(file_table), "")?;
        for (path, v) in parsed {
            set_path(&mut value, &path, v)?;
        }
        let cfg: SplConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| SplError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| SplError::io(p, e))?),
            None => None,
        };
        Self::resolve(text.as_deref(), overrides, Preset::Desk)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn parse_override(text: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| SplError::Config(format!("override {text:?} is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(SplError::Config(format!("override key {key:?} is malformed")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn merge(dst: &mut toml::Value, src: toml::Value, at: &str) -> Result<()> {
    match (dst, src) {
        (toml::Value::Table(d), toml::Value::Table(s)) => {
            for (k, v) in s {
                let here = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match d.get_mut(&k) {
                    Some(existing) if existing.is_table() && v.is_table() => merge(existing, v, &here)?,
                    _ => {
                        d.insert(k, v);
                    }
                }
            }
            Ok(())
        }
        (d, s) => {
            *d = s;
            Ok(())
        }
    }
}

fn set_path(root: &mut toml::Value, path: &[String], value: toml::Value) -> Result<()> {
    let mut node = root;
    for (i, key) in path.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| SplError::Config(format!("override {}: {} is not a section", path.join("."), path[..i].join("."))))?;
        if i + 1 == path.len() {
            table.insert(key.clone(), value);
            return Ok(());
        }
        node = table
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Ok(())
}
