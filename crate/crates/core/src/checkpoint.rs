//! Single-file training snapshots.
//!
//! Tensors are stored under `generator.`, `discriminator.`, `opt_g.`,
//! `opt_d.` and `teacher.` prefixes; scalar state and the resolved config
//! live in the archive metadata.

use std::collections::BTreeMap;
use std::path::Path;

use tch::{Kind, Tensor};

use crate::archive;
use crate::config::SplConfig;
use crate::error::{Result, SplError};
use crate::model::SplModel;
use crate::optim::Adam;
use crate::teacher::{Teacher, TeacherSpec};
use crate::trainer::Trainer;

pub const SCHEMA_VERSION: u32 = 1;

const GENERATOR: &str = "generator.";
const DISCRIMINATOR: &str = "discriminator.";
const TEACHER: &str = "teacher.";

/// A parsed checkpoint, not yet applied to anything.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: SplConfig,
    pub teacher_spec: TeacherSpec,
    pub epoch: u64,
    pub global_step: u64,
    pub opt_g_steps: u64,
    pub opt_d_steps: u64,
    pub sampler_seed: u64,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    fn section(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|n| (n.to_string(), v.shallow_clone())))
            .collect()
    }

    pub fn teacher(&self) -> Result<Teacher> {
        Teacher::from_tensors(self.teacher_spec.clone(), &self.section(TEACHER))
    }

    /// Model with the stored weights, for inference.
    pub fn model(&self) -> Result<SplModel> {
        let model = SplModel::new(&self.config.model, self.config.train.seed, Kind::Float)?;
        model.g_store.load(&self.section(GENERATOR))?;
        model.d_store.load(&self.section(DISCRIMINATOR))?;
        Ok(model)
    }
}

fn prefixed<'a>(prefix: &str, it: impl Iterator<Item = (&'a String, &'a Tensor)>) -> Vec<(String, Tensor)> {
    it.map(|(k, v)| (format!("{prefix}{k}"), v.detach())).collect()
}

pub fn to_bytes(trainer: &Trainer) -> Result<Vec<u8>> {
    let mut tensors = BTreeMap::new();
    tensors.extend(prefixed(GENERATOR, trainer.model.g_store.named_tensors()));
    tensors.extend(prefixed(DISCRIMINATOR, trainer.model.d_store.named_tensors()));
    tensors.extend(trainer.opt_g.state_tensors("opt_g"));
    tensors.extend(trainer.opt_d.state_tensors("opt_d"));
    tensors.extend(prefixed(TEACHER, trainer.teacher.named_tensors().iter()));
    let meta = BTreeMap::from([
        ("schema_version".to_string(), SCHEMA_VERSION.to_string()),
        ("config".to_string(), serde_json::to_string(&trainer.config).expect("config serializes")),
        ("teacher_spec".to_string(), serde_json::to_string(trainer.teacher.spec()).expect("spec serializes")),
        ("epoch".to_string(), trainer.epoch().to_string()),
        ("global_step".to_string(), trainer.global_step.to_string()),
        ("opt_g_steps".to_string(), trainer.opt_g.steps().to_string()),
        ("opt_d_steps".to_string(), trainer.opt_d.steps().to_string()),
        ("sampler_seed".to_string(), trainer.config.train.seed.to_string()),
    ]);
    archive::to_bytes(&tensors, meta)
}

/// Atomically writes the trainer's full state.
pub fn save(trainer: &Trainer, path: &Path) -> Result<()> {
    archive::atomic_write(path, &to_bytes(trainer)?)
}

fn meta_field<'a>(meta: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| SplError::Load(format!("checkpoint metadata lacks `{key}`")))
}

fn meta_u64(meta: &BTreeMap<String, String>, key: &str) -> Result<u64> {
    meta_field(meta, key)?
        .parse()
        .map_err(|e| SplError::Load(format!("checkpoint metadata `{key}`: {e}")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let (tensors, meta) = archive::from_bytes(bytes)?;
    let version = meta_field(&meta, "schema_version")?;
    if version != SCHEMA_VERSION.to_string() {
        return Err(SplError::SchemaVersion {
            found: version.to_string(),
            expected: SCHEMA_VERSION,
        });
    }
    let config: SplConfig = serde_json::from_str(meta_field(&meta, "config")?)
        .map_err(|e| SplError::Load(format!("checkpoint config: {e}")))?;
    let teacher_spec: TeacherSpec = serde_json::from_str(meta_field(&meta, "teacher_spec")?)
        .map_err(|e| SplError::Load(format!("checkpoint teacher spec: {e}")))?;
    Ok(Checkpoint {
        config,
        teacher_spec,
        epoch: meta_u64(&meta, "epoch")?,
        global_step: meta_u64(&meta, "global_step")?,
        opt_g_steps: meta_u64(&meta, "opt_g_steps")?,
        opt_d_steps: meta_u64(&meta, "opt_d_steps")?,
        sampler_seed: meta_u64(&meta, "sampler_seed")?,
        tensors,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| SplError::io(path, e))?;
    from_bytes(&bytes)
}

/// Restores model, optimizer and step state into `trainer`. Everything is
/// validated first; on error the trainer is untouched.
pub fn restore(trainer: &mut Trainer, ckpt: &Checkpoint) -> Result<()> {
    if ckpt.config.model != trainer.config.model {
        return Err(SplError::Config(format!(
            "checkpoint model config {:?} differs from {:?}",
            ckpt.config.model, trainer.config.model
        )));
    }
    if &ckpt.teacher_spec != trainer.teacher.spec() {
        return Err(SplError::Config(format!(
            "checkpoint teacher {} differs from configured teacher {}",
            ckpt.teacher_spec.name,
            trainer.teacher.spec().name
        )));
    }
    let (g, d) = (ckpt.section(GENERATOR), ckpt.section(DISCRIMINATOR));
    trainer.model.g_store.check_compatible(&g)?;
    trainer.model.d_store.check_compatible(&d)?;
    let teacher = ckpt.teacher()?;
    if teacher.to_bytes()? != trainer.teacher.to_bytes()? {
        return Err(SplError::Config("checkpoint teacher weights differ from the configured teacher".into()));
    }
    let adam = trainer.config.train.adam;
    let opt_g = Adam::restore(adam, ckpt.opt_g_steps, "opt_g", &ckpt.tensors, &trainer.model.g_store)?;
    let opt_d = Adam::restore(adam, ckpt.opt_d_steps, "opt_d", &ckpt.tensors, &trainer.model.d_store)?;
    let known = |k: &String| {
        [GENERATOR, DISCRIMINATOR, TEACHER, "opt_g.", "opt_d."]
            .iter()
            .any(|p| k.starts_with(p))
    };
    if let Some(k) = ckpt.tensors.keys().find(|k| !known(k)) {
        return Err(SplError::Load(format!("unexpected checkpoint tensor `{k}`")));
    }

    trainer.model.g_store.load(&g)?;
    trainer.model.d_store.load(&d)?;
    trainer.opt_g = opt_g;
    trainer.opt_d = opt_d;
    trainer.global_step = ckpt.global_step;
    Ok(())
}
