//! Reconstruction, prior-distillation and adversarial objectives.
//!
//! All ℓ1 terms are means over every element, so the weights do not depend
//! on resolution or on the teacher's channel count.

use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::error::{Result, SplError};
use crate::nn::{check_rank4, resize_nearest, spatial_dims};

/// Scores are clamped to `[SCORE_CLAMP, 1 - SCORE_CLAMP]` before logs.
pub const SCORE_CLAMP: f64 = 1e-7;

/// Form of the generator's adversarial term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GanVariant {
    /// `-mean(log(1 - D(fake)))`, exactly as written in the objective.
    PaperLiteral,
    /// `-mean(log D(fake))`.
    Nonsaturating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_img: f64,
    pub lambda_adv: f64,
    pub lambda_prior: f64,
    /// Extra prior-loss weight inside holes.
    pub alpha: f64,
    /// Extra reconstruction weight inside holes.
    pub delta: f64,
    pub gan_variant: GanVariant,
    /// `false` drops the prior term entirely (the "w/o S" ablation).
    pub use_prior: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_img: 10.0,
            lambda_adv: 1.0,
            lambda_prior: 1.0,
            alpha: 3.0,
            delta: 5.0,
            gan_variant: GanVariant::Nonsaturating,
            use_prior: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_img", self.lambda_img),
            ("lambda_adv", self.lambda_adv),
            ("lambda_prior", self.lambda_prior),
            ("alpha", self.alpha),
            ("delta", self.delta),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(SplError::Config(format!("loss.{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Per-step loss values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_img: f64,
    pub l_prior: f64,
    pub l_adv_g: f64,
    pub l_adv_d: f64,
    pub total: f64,
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.size() != b.size() {
        return Err(SplError::Dimension(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.size(),
            b.size()
        )));
    }
    Ok(())
}

/// Checks that a single-channel weight map can broadcast over `x`.
fn check_mask(x: &Tensor, mask: &Tensor, what: &str) -> Result<()> {
    let (n, _, h, w) = check_rank4(x, what)?;
    let (mn, mc, mh, mw) = check_rank4(mask, what)?;
    if (mn, mc, mh, mw) != (n, 1, h, w) {
        return Err(SplError::Dimension(format!(
            "{what}: mask {:?} does not match {:?}",
            mask.size(),
            x.size()
        )));
    }
    Ok(())
}

/// Nearest-neighbour resize of the pixel mask to the prior's spatial size.
pub fn resize_mask(mask: &Tensor, like: &Tensor) -> Tensor {
    let (h, w) = spatial_dims(like);
    resize_nearest(mask, h, w)
}

/// `mean(|S − S'| · (1 + α·M_s))`.
pub fn prior_loss(target: &Tensor, adapted: &Tensor, mask_s: &Tensor, alpha: f64) -> Result<Tensor> {
    check_same(target, adapted, "prior loss")?;
    check_mask(target, mask_s, "prior loss")?;
    Ok(((target - adapted).abs() * (mask_s * alpha + 1.0)).mean(Kind::Double).to_kind(adapted.kind()))
}

/// `mean(|I − Î| · (1 + δ·M))`, the mask broadcast over colour channels.
pub fn reconstruction_loss(original: &Tensor, output: &Tensor, mask: &Tensor, delta: f64) -> Result<Tensor> {
    check_same(original, output, "reconstruction loss")?;
    check_mask(original, mask, "reconstruction loss")?;
    Ok(((original - output).abs() * (mask * delta + 1.0)).mean(Kind::Double).to_kind(output.kind()))
}

fn clamp_scores(s: &Tensor) -> Tensor {
    s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

pub fn generator_adv_loss(fake_scores: &Tensor, variant: GanVariant) -> Tensor {
    let s = clamp_scores(fake_scores);
    match variant {
        GanVariant::PaperLiteral => -s.ones_like().g_sub(&s).log().mean(fake_scores.kind()),
        GanVariant::Nonsaturating => -s.log().mean(fake_scores.kind()),
    }
}

/// `−mean(log D(real)) − mean(log(1 − D(fake)))`, the minimized form.
pub fn discriminator_adv_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Tensor {
    let real = clamp_scores(real_scores);
    let fake = clamp_scores(fake_scores);
    -real.log().mean(real_scores.kind()) - fake.ones_like().g_sub(&fake).log().mean(fake_scores.kind())
}

/// Differentiable weighted objective; `l_prior` is ignored when the prior
/// term is disabled.
pub fn weighted_total(l_img: &Tensor, l_adv_g: &Tensor, l_prior: Option<&Tensor>, cfg: &LossConfig) -> Tensor {
    let mut total = l_img * cfg.lambda_img + l_adv_g * cfg.lambda_adv;
    if cfg.use_prior {
        if let Some(p) = l_prior {
            total = total + p * cfg.lambda_prior;
        }
    }
    total
}

/// Combines scalar components into a report. With the prior term disabled
/// `l_prior` is reported as 0 and excluded.
pub fn total_loss(l_img: f64, l_adv_g: f64, l_prior: f64, l_adv_d: f64, cfg: &LossConfig) -> Result<LossReport> {
    let l_prior = if cfg.use_prior { l_prior } else { 0.0 };
    let total = cfg.lambda_img * l_img + cfg.lambda_adv * l_adv_g + cfg.lambda_prior * l_prior;
    let report = LossReport {
        l_img,
        l_prior,
        l_adv_g,
        l_adv_d,
        total,
    };
    if [l_img, l_prior, l_adv_g, l_adv_d, total].iter().any(|v| !v.is_finite()) {
        return Err(SplError::Divergence(format!("non-finite loss component: {report:?}")));
    }
    Ok(report)
}
