//! Builds teachers, datasets and trainers from a resolved config.

use tch::Kind;

use crate::config::SplConfig;
use crate::data::{load_image_dir, load_mask_dir, ImageSet, MaskSet, RatioBucket};
use crate::error::{Result, SplError};
use crate::teacher::{build_standin_teacher, load_external_teacher, Teacher};
use crate::trainer::{TrainData, Trainer};

pub const STANDIN: &str = "standin";

pub fn load_teacher(cfg: &SplConfig) -> Result<Teacher> {
    if cfg.teacher.name == STANDIN {
        return build_standin_teacher(cfg.teacher.seed, cfg.model.prior_channels, Kind::Float);
    }
    let entry = cfg.teacher.entry().ok_or_else(|| {
        SplError::Config(format!(
            "teacher `{}` is neither `{STANDIN}` nor a registry entry",
            cfg.teacher.name
        ))
    })?;
    let teacher = load_external_teacher(entry, Kind::Float)?;
    if teacher.out_channels() != cfg.model.prior_channels {
        return Err(SplError::Config(format!(
            "teacher `{}` has {} channels, model.prior_channels is {}",
            entry.name,
            teacher.out_channels(),
            cfg.model.prior_channels
        )));
    }
    Ok(teacher)
}

pub fn train_images(cfg: &SplConfig) -> Result<ImageSet> {
    let d = &cfg.data;
    match &d.image_dir {
        Some(dir) => load_image_dir(dir, d.image_size, d.center_crop),
        None => ImageSet::synthetic(d.synthetic_seed, d.synthetic_images, d.image_size),
    }
}

pub fn train_masks(cfg: &SplConfig) -> Result<MaskSet> {
    let d = &cfg.data;
    match &d.mask_dir {
        Some(dir) => load_mask_dir(dir, d.image_size, d.image_size),
        None => MaskSet::generate(d.mask_seed, d.train_masks, &d.buckets()?, d.image_size, d.image_size),
    }
}

/// `eval.masks_per_bucket` generated masks for each of `buckets`.
pub fn eval_masks(cfg: &SplConfig, buckets: &[RatioBucket]) -> Result<MaskSet> {
    let size = cfg.data.image_size;
    MaskSet::generate(
        cfg.eval.mask_seed,
        cfg.eval.masks_per_bucket * buckets.len(),
        buckets,
        size,
        size,
    )
}

impl Trainer {
    /// Fresh trainer over the configured data and teacher.
    pub fn from_config(cfg: SplConfig) -> Result<Trainer> {
        cfg.validate()?;
        let teacher = load_teacher(&cfg)?;
        let data = TrainData::sampled(
            train_images(&cfg)?,
            train_masks(&cfg)?,
            cfg.train.seed,
            cfg.train.batch_size,
            cfg.data.fill,
        )?;
        Trainer::new(cfg, teacher, data)
    }
}
