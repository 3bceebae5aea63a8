use std::path::{Path, PathBuf};

use image::RgbImage;
use spl_core::checkpoint::{self, Checkpoint};
use spl_core::config::{Preset, SplConfig};
use spl_core::data::{
    build_eval_pairing, load_image_dir, load_mask_dir, load_mask_png, preprocess, save_mask_png, to_rgb_image,
    ImageSet, MaskSet, MaskTensor, MaskedSample, Pairing, RatioBucket,
};
use spl_core::evaluator::{comparison_csv, evaluate, BucketedReport};
use spl_core::model::composite;
use spl_core::setup::{eval_masks, train_images};
use spl_core::trainer::{TrainLog, Trainer};
use spl_core::viz::{self, hconcat};
use spl_core::{Result, SplError};

use crate::GlobalArgs;

pub const CONFIG_FILE: &str = "config.toml";
pub const FINAL_CHECKPOINT: &str = "final.safetensors";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const PAIRING_FILE: &str = "pairing.tsv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SplError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| SplError::io(path, e))
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| SplError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })
}

/// Preset, then `--config`, then `--set`, then `--seed` as the training seed.
fn resolve_config(g: &GlobalArgs) -> Result<SplConfig> {
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        overrides.push(format!("train.seed={seed}"));
    }
    SplConfig::load(g.config.as_deref(), &overrides)
}

/// The checkpoint's embedded config with `--set` applied on top. Model
/// settings must stay as trained.
fn checkpoint_config(g: &GlobalArgs, ckpt: &Checkpoint) -> Result<SplConfig> {
    if g.config.is_some() {
        return Err(SplError::Config(
            "--config does not apply to checkpoint commands; use --set to adjust the embedded config".into(),
        ));
    }
    let cfg = SplConfig::resolve(Some(&ckpt.config.to_toml()), &g.overrides, Preset::Desk)?;
    if cfg.model != ckpt.config.model {
        return Err(SplError::Config("overrides may not change model.* settings of a trained checkpoint".into()));
    }
    Ok(cfg)
}

fn write_config(dir: &Path, cfg: &SplConfig) -> Result<()> {
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml())
}

fn run_training(cfg: SplConfig, dir: &Path, resume: Option<&Path>) -> Result<Trainer> {
    create_dir(dir)?;
    write_config(dir, &cfg)?;
    let mut trainer = Trainer::from_config(cfg)?;
    if let Some(path) = resume {
        checkpoint::restore(&mut trainer, &checkpoint::load(path)?)?;
        log::info!("resumed from {} at step {}", path.display(), trainer.global_step);
    }
    let planned = trainer.planned_steps();
    log::info!("training {} steps into {}", planned, dir.display());
    let ckpt_dir = dir.join("checkpoints");
    if trainer.config.train.checkpoint_every > 0 {
        create_dir(&ckpt_dir)?;
    }
    let mut log = TrainLog::create(&dir.join(TRAIN_LOG))?;
    let every = (planned / 20).max(1);
    trainer.run(Some(&mut log), Some(&ckpt_dir), |step, r| {
        if step % every == 0 || step == planned {
            log::info!(
                "step {step}/{planned}: total {:.4} l_img {:.4} l_prior {:.4} l_adv_g {:.4} l_adv_d {:.4}",
                r.total,
                r.l_img,
                r.l_prior,
                r.l_adv_g,
                r.l_adv_d
            );
        }
    })?;
    log.flush()?;
    checkpoint::save(&trainer, &dir.join(FINAL_CHECKPOINT))?;
    Ok(trainer)
}

pub fn train(g: &GlobalArgs, resume: Option<&Path>) -> Result<()> {
    let cfg = resolve_config(g)?;
    run_training(cfg, &g.out, resume)?;
    Ok(())
}

/// Images, masks and pairing for evaluation; every mask bucket is covered
/// unless a mask directory is given.
fn eval_inputs(
    cfg: &SplConfig,
    images: Option<&Path>,
    masks: Option<&Path>,
    pairing: Option<&Path>,
) -> Result<(ImageSet, MaskSet, Pairing)> {
    let size = cfg.data.image_size;
    let images = match images {
        Some(dir) => load_image_dir(dir, size, cfg.data.center_crop)?,
        None => train_images(cfg)?,
    };
    let masks = match masks {
        Some(dir) => load_mask_dir(dir, size, size)?,
        None => eval_masks(cfg, &RatioBucket::all().collect::<Vec<_>>())?,
    };
    let pairing = match pairing {
        Some(p) => Pairing::read(p)?,
        None => build_eval_pairing(&images.ids, &masks.ids, cfg.eval.pairing_seed)?,
    };
    Ok((images, masks, pairing))
}

fn write_report(dir: &Path, stem: &str, report: &BucketedReport) -> Result<()> {
    write_text(&dir.join(format!("{stem}.csv")), &report.to_csv())?;
    write_text(&dir.join(format!("{stem}.json")), &report.to_json())
}

pub fn eval(
    g: &GlobalArgs,
    ckpt_path: &Path,
    images: Option<&Path>,
    masks: Option<&Path>,
    pairing: Option<&Path>,
) -> Result<()> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let cfg = checkpoint_config(g, &ckpt)?;
    let model = ckpt.model()?;
    let (images, masks, pairing) = eval_inputs(&cfg, images, masks, pairing)?;
    create_dir(&g.out)?;
    write_config(&g.out, &cfg)?;
    pairing.write(&g.out.join(PAIRING_FILE))?;
    let report = evaluate(&model, &images, &masks, &pairing, cfg.eval.composite, cfg.data.fill)?;
    write_report(&g.out, "report", &report)?;
    if let Some(all) = report.row("All").and_then(|r| r.means) {
        log::info!(
            "{} samples: PSNR {:.3} SSIM {:.4} MAE {:.4}",
            pairing.len(),
            all.psnr,
            all.ssim,
            all.mae
        );
    }
    Ok(())
}

fn load_single_image(path: &Path, cfg: &SplConfig) -> Result<spl_core::data::ImageTensor> {
    let raw = image::open(path).map_err(|e| SplError::Decode(format!("{}: {e}", path.display())))?;
    preprocess(&raw, cfg.data.image_size, cfg.data.center_crop)
}

pub fn infer(g: &GlobalArgs, ckpt_path: &Path, image: &Path, mask: &Path) -> Result<()> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let cfg = checkpoint_config(g, &ckpt)?;
    let model = ckpt.model()?;
    let image = load_single_image(image, &cfg)?;
    let mask = load_mask_png(mask, image.height(), image.width())?;
    let sample = MaskedSample::new(image, mask, cfg.data.fill)?;
    let raw = model.infer(&sample)?;
    let comp = composite(&raw, &sample.image, &sample.mask)?;
    create_dir(&g.out)?;
    let panels = [
        ("corrupted.png", to_rgb_image(&sample.corrupted, 0)),
        ("raw.png", to_rgb_image(&raw, 0)),
        ("composited.png", to_rgb_image(&comp, 0)),
    ];
    for (name, img) in &panels {
        save_png(img, &g.out.join(name))?;
    }
    let grid: Vec<RgbImage> = panels.into_iter().map(|(_, i)| i).chain([to_rgb_image(&sample.image, 0)]).collect();
    save_png(&hconcat(&grid), &g.out.join("grid.png"))
}

pub fn visualize_priors(g: &GlobalArgs, ckpt_path: &Path, image: &Path, mask: Option<&Path>, k: usize) -> Result<()> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let cfg = checkpoint_config(g, &ckpt)?;
    let model = ckpt.model()?;
    let image = load_single_image(image, &cfg)?;
    let (h, w) = (image.height(), image.width());
    let mask = match mask {
        Some(p) => load_mask_png(p, h, w)?,
        None => MaskTensor::zeros(1, h, w)?,
    };
    let sample = MaskedSample::new(image, mask, cfg.data.fill)?;
    let seed = g.seed.unwrap_or(0);
    let (map, clustering) = viz::visualize_priors(&model, &sample, k, seed)?;
    create_dir(&g.out)?;
    save_png(&map, &g.out.join("priors.png"))?;
    save_png(
        &hconcat(&[to_rgb_image(&sample.corrupted, 0), map]),
        &g.out.join("priors_side_by_side.png"),
    )?;
    let summary = serde_json::json!({
        "k": clustering.k(),
        "seed": seed,
        "iterations": clustering.iterations,
    });
    write_text(&g.out.join("priors.json"), &serde_json::to_string_pretty(&summary).expect("json"))
}

pub fn make_masks(g: &GlobalArgs, count: usize, labels: &[String], size: Option<usize>) -> Result<()> {
    let cfg = resolve_config(g)?;
    let buckets: Vec<RatioBucket> = if labels.is_empty() {
        RatioBucket::all().collect()
    } else {
        labels.iter().map(|l| RatioBucket::from_label(l)).collect::<Result<_>>()?
    };
    let size = size.unwrap_or(cfg.data.image_size);
    let seed = g.seed.unwrap_or(cfg.data.mask_seed);
    let set = MaskSet::generate(seed, count, &buckets, size, size)?;
    create_dir(&g.out)?;
    let mut index = String::from("id,ratio,bucket\n");
    for (id, mask) in set.ids.iter().zip(&set.masks) {
        save_mask_png(mask, &g.out.join(format!("{id}.png")))?;
        let ratio = spl_core::data::mask_ratio(mask);
        index.push_str(&format!("{id},{ratio:.6},{}\n", spl_core::data::bucket_of(ratio)?.label()));
    }
    write_text(&g.out.join("masks.csv"), &index)?;
    write_text(&g.out.join("seed.txt"), &format!("{seed}\n"))
}

pub fn make_pairing(g: &GlobalArgs, images: &Path, masks: &Path) -> Result<()> {
    let cfg = resolve_config(g)?;
    let size = cfg.data.image_size;
    let images = load_image_dir(images, size, cfg.data.center_crop)?;
    let masks = load_mask_dir(masks, size, size)?;
    let seed = g.seed.unwrap_or(cfg.eval.pairing_seed);
    let pairing = build_eval_pairing(&images.ids, &masks.ids, seed)?;
    create_dir(&g.out)?;
    pairing.write(&g.out.join(PAIRING_FILE))?;
    write_text(&g.out.join("seed.txt"), &format!("{seed}\n"))
}

pub const ABLATIONS: [&str; 3] = ["wo-S", "concat", "alt-teacher"];

/// Applies an ablation's flag mapping to a copy of `base`.
pub fn ablated_config(base: &SplConfig, name: &str, teacher: Option<&str>) -> Result<SplConfig> {
    let mut cfg = base.clone();
    match name {
        "wo-S" => cfg.loss.use_prior = false,
        "concat" => cfg.model.use_spade = false,
        "alt-teacher" => {
            let entry = match teacher {
                Some(t) => base.teacher.registry.iter().find(|e| e.name == t),
                None => base.teacher.registry.iter().find(|e| e.name != base.teacher.name),
            }
            .ok_or_else(|| {
                SplError::Config(match teacher {
                    Some(t) => format!("alt-teacher: `{t}` is not in teacher.registry"),
                    None => "alt-teacher needs another backbone in teacher.registry".into(),
                })
            })?;
            cfg.teacher.name = entry.name.clone();
            cfg.model.prior_channels = entry.d;
        }
        other => {
            return Err(SplError::Config(format!(
                "unknown ablation `{other}`, expected one of {}",
                ABLATIONS.join(", ")
            )))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn ablate(g: &GlobalArgs, name: &str, teacher: Option<&str>) -> Result<()> {
    let base = resolve_config(g)?;
    let variant = ablated_config(&base, name, teacher)?;
    create_dir(&g.out)?;
    let (images, masks, pairing) = eval_inputs(&base, None, None, None)?;
    pairing.write(&g.out.join(PAIRING_FILE))?;

    let mut reports = Vec::new();
    for (label, cfg) in [("base", base), (name, variant)] {
        let dir: PathBuf = g.out.join(label);
        let trainer = run_training(cfg, &dir, None)?;
        let cfg = &trainer.config;
        let report = evaluate(&trainer.model, &images, &masks, &pairing, cfg.eval.composite, cfg.data.fill)?;
        write_report(&dir, "report", &report)?;
        reports.push((label, report));
    }
    let runs: Vec<(&str, &BucketedReport)> = reports.iter().map(|(l, r)| (*l, r)).collect();
    write_text(&g.out.join("comparison.csv"), &comparison_csv(&runs))
}
