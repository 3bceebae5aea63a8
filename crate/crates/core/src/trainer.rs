//! Alternating discriminator / generator optimization.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::config::SplConfig;
use crate::data::{ImageSet, MaskSet, MaskedSample};
use crate::error::{Result, SplError};
use crate::losses::{
    discriminator_adv_loss, generator_adv_loss, prior_loss, reconstruction_loss, resize_mask, total_loss,
    weighted_total, LossConfig, LossReport,
};
use crate::model::{model_inputs, ForwardOutput, SplModel};
use crate::optim::{Adam, AdamConfig};
use crate::teacher::Teacher;

/// Learning-rate decay points per dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetProfile {
    Places2,
    Celeba,
    Streetview,
    /// 16 synthetic 64×64 scenes; counts are in passes over that set.
    Desk,
}

impl DatasetProfile {
    /// `(decay_epoch, finetune_epochs)`.
    pub fn schedule(self) -> (u64, u64) {
        match self {
            DatasetProfile::Places2 | DatasetProfile::Celeba => (30, 10),
            DatasetProfile::Streetview => (50, 20),
            DatasetProfile::Desk => (400, 100),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_finetune: f64,
    pub profile: DatasetProfile,
    pub decay_epoch: u64,
    pub finetune_epochs: u64,
    /// Stops early after this many steps.
    #[serde(default)]
    pub max_steps: Option<u64>,
    pub adam: AdamConfig,
    /// Steps between checkpoints written by `run`; 0 disables them.
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn for_profile(profile: DatasetProfile, batch_size: usize) -> Self {
        let (decay_epoch, finetune_epochs) = profile.schedule();
        TrainConfig {
            seed: 0,
            batch_size,
            lr_initial: 1e-4,
            lr_finetune: 1e-5,
            profile,
            decay_epoch,
            finetune_epochs,
            max_steps: None,
            adam: AdamConfig::default(),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SplError::Config("train.batch_size must be >= 1".into()));
        }
        if self.decay_epoch < 1 {
            return Err(SplError::Config("train.decay_epoch must be >= 1".into()));
        }
        if !(self.lr_finetune < self.lr_initial && self.lr_finetune > 0.0) {
            return Err(SplError::Config(format!(
                "need 0 < lr_finetune < lr_initial, got {} and {}",
                self.lr_finetune, self.lr_initial
            )));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> u64 {
        self.decay_epoch + self.finetune_epochs
    }
}

/// Step decay: `lr_initial` before `decay_epoch`, `lr_finetune` from then on.
pub fn lr_schedule(epoch: u64, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.decay_epoch {
        cfg.lr_initial
    } else {
        cfg.lr_finetune
    }
}

/// Stateless batch selection: the batch for a step depends only on the seed
/// and the step index, so a resumed run sees the same data order.
#[derive(Debug, Clone)]
pub struct Sampler {
    pub seed: u64,
    pub batch_size: usize,
    pub n_images: usize,
    pub n_masks: usize,
}

impl Sampler {
    pub fn steps_per_epoch(&self) -> u64 {
        (self.n_images / self.batch_size).max(1) as u64
    }

    /// `(image index, mask index)` pairs for `step`.
    pub fn batch(&self, step: u64) -> Vec<(usize, usize)> {
        let spe = self.steps_per_epoch();
        let (epoch, k) = (step / spe, (step % spe) as usize);
        let mut perm: Vec<usize> = (0..self.n_images).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ epoch.wrapping_mul(0x9e37_79b9)));
        let mut mask_rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(1));
        mask_rng.set_stream(step);
        (0..self.batch_size)
            .map(|j| (perm[(k * self.batch_size + j) % self.n_images], mask_rng.gen_range(0..self.n_masks)))
            .collect()
    }
}

/// Where batches come from.
#[derive(Debug)]
pub enum TrainData {
    /// The same batch every step.
    Fixed(MaskedSample),
    Sampled {
        images: ImageSet,
        masks: MaskSet,
        sampler: Sampler,
        fill: f32,
    },
}

impl TrainData {
    pub fn sampled(images: ImageSet, masks: MaskSet, seed: u64, batch_size: usize, fill: f32) -> Result<Self> {
        if images.is_empty() || masks.is_empty() {
            return Err(SplError::Config("training needs at least one image and one mask".into()));
        }
        let sampler = Sampler {
            seed,
            batch_size,
            n_images: images.len(),
            n_masks: masks.len(),
        };
        Ok(TrainData::Sampled {
            images,
            masks,
            sampler,
            fill,
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        match self {
            TrainData::Fixed(_) => 1,
            TrainData::Sampled { sampler, .. } => sampler.steps_per_epoch(),
        }
    }

    pub fn batch(&self, step: u64) -> Result<MaskedSample> {
        match self {
            TrainData::Fixed(s) => Ok(s.clone()),
            TrainData::Sampled {
                images,
                masks,
                sampler,
                fill,
            } => {
                let samples = sampler
                    .batch(step)
                    .into_iter()
                    .map(|(i, m)| MaskedSample::new(images.images[i].clone(), masks.masks[m].clone(), *fill))
                    .collect::<Result<Vec<_>>>()?;
                MaskedSample::concat(&samples.iter().collect::<Vec<_>>())
            }
        }
    }
}

fn batch_hash(batch: &MaskedSample) -> u64 {
    let mut h = DefaultHasher::new();
    for v in batch.image.data().iter().chain(batch.mask.data().iter()) {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Everything one step needs, computed once.
#[derive(Debug)]
pub struct StepInputs {
    pub image: Tensor,
    pub mask: Tensor,
    /// Teacher features of the enlarged ground truth.
    pub target: Tensor,
    pub out: ForwardOutput,
    hash: u64,
}

/// Model, frozen teacher, both optimizers and the step counter.
#[derive(Debug)]
pub struct Trainer {
    pub config: SplConfig,
    pub model: SplModel,
    pub teacher: Teacher,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub global_step: u64,
    pub data: TrainData,
}

impl Trainer {
    pub fn new(config: SplConfig, teacher: Teacher, data: TrainData) -> Result<Self> {
        config.validate()?;
        if teacher.out_channels() != config.model.prior_channels {
            return Err(SplError::Config(format!(
                "teacher produces {} channels but model.prior_channels = {}",
                teacher.out_channels(),
                config.model.prior_channels
            )));
        }
        let model = SplModel::new(&config.model, config.train.seed, Kind::Float)?;
        Ok(Trainer {
            opt_g: Adam::new(config.train.adam),
            opt_d: Adam::new(config.train.adam),
            config,
            model,
            teacher,
            global_step: 0,
            data,
        })
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.config.loss
    }

    pub fn epoch(&self) -> u64 {
        self.global_step / self.data.steps_per_epoch()
    }

    pub fn current_lr(&self) -> f64 {
        lr_schedule(self.epoch(), &self.config.train)
    }

    /// Steps needed to finish every configured epoch, capped by `max_steps`.
    pub fn planned_steps(&self) -> u64 {
        let full = self.config.train.total_epochs() * self.data.steps_per_epoch();
        self.config.train.max_steps.map_or(full, |m| m.min(full))
    }

    /// Teacher target, generator forward pass and tensors for one batch.
    pub fn prepare(&self, batch: &MaskedSample) -> Result<StepInputs> {
        let kind = self.model.kind();
        let (base, enlarged) = model_inputs(batch, kind)?;
        Ok(StepInputs {
            image: batch.image.to_tch(kind),
            mask: batch.mask.to_tch(kind),
            target: self.teacher.features(&batch.image_up.to_tch(kind))?,
            out: self.model.forward(&base, &enlarged)?,
            hash: batch_hash(batch),
        })
    }

    fn diverged(&self, hash: u64, what: &str, values: String) -> SplError {
        SplError::Divergence(format!(
            "step {}: non-finite {what} (batch hash {hash:016x}): {values}",
            self.global_step
        ))
    }

    /// Minimizes the discriminator loss on real images and detached outputs.
    /// Touches only the discriminator store.
    pub fn discriminator_update(&mut self, inputs: &StepInputs, lr: f64) -> Result<f64> {
        self.model.d_store.zero_grad();
        let real = self.model.discriminate(&inputs.image, true);
        let fake = self.model.discriminate(&inputs.out.output.detach(), false);
        let l_d = discriminator_adv_loss(&real, &fake);
        let value = l_d.double_value(&[]);
        if !value.is_finite() {
            return Err(self.diverged(inputs.hash, "discriminator loss", format!("l_adv_d = {value}")));
        }
        l_d.backward();
        self.opt_d.step(&self.model.d_store, lr);
        Ok(value)
    }

    /// Minimizes the weighted generator objective against the current
    /// discriminator. Touches only the generator store.
    pub fn generator_update(&mut self, inputs: &StepInputs, l_adv_d: f64, lr: f64) -> Result<LossReport> {
        let cfg = self.config.loss.clone();
        let out = &inputs.out;
        self.model.g_store.zero_grad();
        let l_adv_g = generator_adv_loss(&self.model.discriminate(&out.output, false), cfg.gan_variant);
        let l_img = reconstruction_loss(&inputs.image, &out.output, &inputs.mask, cfg.delta)?;
        let mask_s = resize_mask(&inputs.mask, &inputs.target);
        let l_prior = prior_loss(&inputs.target, &out.adapted, &mask_s, cfg.alpha)?;
        let total = weighted_total(&l_img, &l_adv_g, Some(&l_prior), &cfg);
        let report = total_loss(
            l_img.double_value(&[]),
            l_adv_g.double_value(&[]),
            l_prior.double_value(&[]),
            l_adv_d,
            &cfg,
        )
        .map_err(|e| match e {
            SplError::Divergence(msg) => self.diverged(inputs.hash, "generator loss", msg),
            other => other,
        })?;
        total.backward();
        self.opt_g.step(&self.model.g_store, lr);
        Ok(report)
    }

    /// One discriminator update on detached outputs, then one generator-side
    /// update against the weighted objective.
    pub fn train_step(&mut self, batch: &MaskedSample) -> Result<LossReport> {
        let lr = self.current_lr();
        let inputs = self.prepare(batch)?;
        let l_adv_d = self.discriminator_update(&inputs, lr)?;
        let report = self.generator_update(&inputs, l_adv_d, lr)?;
        self.global_step += 1;
        Ok(report)
    }

    /// Trains until the planned step count. `on_step` sees every report
    /// after it has been logged.
    pub fn run(
        &mut self,
        mut log: Option<&mut TrainLog>,
        checkpoint_dir: Option<&Path>,
        mut on_step: impl FnMut(u64, &LossReport),
    ) -> Result<Vec<LossReport>> {
        let mut reports = Vec::new();
        let every = self.config.train.checkpoint_every;
        while self.global_step < self.planned_steps() {
            let lr = self.current_lr();
            let batch = self.data.batch(self.global_step)?;
            let report = self.train_step(&batch)?;
            if let Some(log) = log.as_deref_mut() {
                log.write(self.global_step, &report, lr)?;
            }
            on_step(self.global_step, &report);
            reports.push(report);
            if let Some(dir) = checkpoint_dir {
                if every > 0 && self.global_step % every == 0 {
                    crate::checkpoint::save(self, &dir.join(format!("step_{:07}.safetensors", self.global_step)))?;
                }
            }
        }
        Ok(reports)
    }
}

pub const LOG_HEADER: &str = "step,l_img,l_prior,l_adv_g,l_adv_d,total,lr";

/// Per-step CSV training log.
#[derive(Debug)]
pub struct TrainLog {
    out: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl TrainLog {
    pub fn create(path: &Path) -> Result<Self> {
        let f = std::fs::File::create(path).map_err(|e| SplError::io(path, e))?;
        let mut log = TrainLog {
            out: std::io::BufWriter::new(f),
            path: path.to_path_buf(),
        };
        writeln!(log.out, "{LOG_HEADER}").map_err(|e| SplError::io(path, e))?;
        Ok(log)
    }

    pub fn write(&mut self, step: u64, r: &LossReport, lr: f64) -> Result<()> {
        writeln!(
            self.out,
            "{step},{},{},{},{},{},{lr}",
            r.l_img, r.l_prior, r.l_adv_g, r.l_adv_d, r.total
        )
        .map_err(|e| SplError::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| SplError::io(&self.path, e))
    }
}

impl Drop for TrainLog {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}
