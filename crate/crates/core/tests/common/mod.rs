#![allow(dead_code)]

use std::collections::BTreeMap;

use spl_core::config::{Preset, SplConfig};
use spl_core::data::{ImageSet, MaskSet, MaskedSample, RatioBucket};
use spl_core::nn::ParamStore;
use spl_core::setup::load_teacher;
use spl_core::trainer::{TrainData, Trainer};
use tch::Tensor;

/// Desk preset shrunk so a handful of steps take a few seconds.
pub fn tiny_config() -> SplConfig {
    let mut cfg = SplConfig::preset(Preset::Desk);
    cfg.data.image_size = 32;
    cfg.data.synthetic_images = 8;
    cfg.data.train_masks = 8;
    cfg.model.feature_width = 16;
    cfg.model.prior_channels = 16;
    cfg.model.spade_hidden = 16;
    cfg.model.disc_width = 8;
    cfg.model.n_spade_blocks = 2;
    cfg.model.n_prior_resblocks = 1;
    cfg.train.batch_size = 2;
    cfg
}

/// `n` synthetic images with masks drawn from 10%-30% buckets, as one batch.
pub fn fixed_batch(n: usize, size: usize, seed: u64) -> MaskedSample {
    let buckets = [
        RatioBucket::from_label("10%-20%").unwrap(),
        RatioBucket::from_label("20%-30%").unwrap(),
    ];
    let images = ImageSet::synthetic(seed, n, size).unwrap();
    let masks = MaskSet::generate(seed, n, &buckets, size, size).unwrap();
    let samples: Vec<_> = images
        .images
        .iter()
        .zip(&masks.masks)
        .map(|(i, m)| MaskedSample::new(i.clone(), m.clone(), 0.0).unwrap())
        .collect();
    MaskedSample::concat(&samples.iter().collect::<Vec<_>>()).unwrap()
}

pub fn fixed_trainer(cfg: SplConfig, batch: MaskedSample) -> Trainer {
    let teacher = load_teacher(&cfg).unwrap();
    Trainer::new(cfg, teacher, TrainData::Fixed(batch)).unwrap()
}

pub fn copy_all(store: &ParamStore) -> BTreeMap<String, Tensor> {
    store.named_tensors().map(|(k, v)| (k.clone(), v.detach().copy())).collect()
}

pub fn changed(before: &BTreeMap<String, Tensor>, store: &ParamStore) -> Vec<String> {
    store
        .named_tensors()
        .filter(|(k, v)| !before[*k].equal(&v.detach()))
        .map(|(k, _)| k.clone())
        .collect()
}
