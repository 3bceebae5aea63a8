//! Generator (image encoder, semantic learner, adaptation, decoder) and the
//! patch discriminator.

mod decoder;
mod discriminator;
mod encoder;
mod spade;

use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

pub use decoder::Decoder;
pub use discriminator::{Discriminator, SpectralConv};
pub use encoder::{ImageEncoder, SemanticLearner};
pub use spade::{PlainResBlock, SpadeModulation, SpadeResBlock};

use crate::data::{ImageTensor, MaskTensor, MaskedSample};
use crate::error::{Result, SplError};
use crate::nn::{check_rank4, Conv2d, Padding, ParamStore};

/// Parameter-name prefixes of the generator-side modules.
pub const IMAGE_ENCODER: &str = "image_encoder";
pub const SEMANTIC_LEARNER: &str = "semantic_learner";
pub const ADAPTER: &str = "adapter";
pub const DECODER: &str = "decoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature width `c` shared by both encoders and the decoder.
    pub feature_width: i64,
    /// Teacher channels `d`.
    pub prior_channels: i64,
    pub n_spade_blocks: usize,
    pub n_prior_resblocks: usize,
    pub spade_hidden: i64,
    pub disc_width: i64,
    /// `false` concatenates the prior to the feature instead of modulating.
    pub use_spade: bool,
}

impl ModelConfig {
    pub fn paper() -> Self {
        ModelConfig {
            feature_width: 256,
            prior_channels: 512,
            n_spade_blocks: 8,
            n_prior_resblocks: 5,
            spade_hidden: 128,
            disc_width: 64,
            use_spade: true,
        }
    }

    pub fn desk() -> Self {
        ModelConfig {
            feature_width: 32,
            prior_channels: 64,
            spade_hidden: 32,
            disc_width: 32,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_width", self.feature_width),
            ("prior_channels", self.prior_channels),
            ("spade_hidden", self.spade_hidden),
            ("disc_width", self.disc_width),
            ("n_spade_blocks", self.n_spade_blocks as i64),
        ];
        for (name, v) in positive {
            if v < 1 {
                return Err(SplError::Config(format!("model.{name} must be >= 1, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

fn check_pair(image: &Tensor, mask: &Tensor, multiple: i64, what: &str) -> Result<(i64, i64)> {
    let (b, c, h, w) = check_rank4(image, what)?;
    let (mb, mc, mh, mw) = check_rank4(mask, what)?;
    if c != 3 || mc != 1 {
        return Err(SplError::Dimension(format!(
            "{what}: expected 3-channel image and 1-channel mask, got {c} and {mc}"
        )));
    }
    if (b, h, w) != (mb, mh, mw) {
        return Err(SplError::Dimension(format!(
            "{what}: image {b}x{h}x{w} and mask {mb}x{mh}x{mw} disagree"
        )));
    }
    if h % multiple != 0 || w % multiple != 0 {
        return Err(SplError::Dimension(format!(
            "{what}: spatial size {h}x{w} must be divisible by {multiple}"
        )));
    }
    Ok((h, w))
}

/// Corrupted image and mask at the working resolution; the only input the
/// image encoder accepts.
#[derive(Debug)]
pub struct ImageInput {
    corrupted: Tensor,
    mask: Tensor,
}

impl ImageInput {
    pub fn new(corrupted: Tensor, mask: Tensor) -> Result<Self> {
        check_pair(&corrupted, &mask, 4, "image input")?;
        Ok(ImageInput { corrupted, mask })
    }

    pub fn corrupted(&self) -> &Tensor {
        &self.corrupted
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }
}

/// Corrupted image and mask at twice the working resolution; the only input
/// the semantic learner accepts.
#[derive(Debug)]
pub struct EnlargedInput {
    corrupted: Tensor,
    mask: Tensor,
}

impl EnlargedInput {
    pub fn new(corrupted: Tensor, mask: Tensor) -> Result<Self> {
        check_pair(&corrupted, &mask, 8, "enlarged input")?;
        Ok(EnlargedInput { corrupted, mask })
    }

    pub fn corrupted(&self) -> &Tensor {
        &self.corrupted
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }
}

/// Builds both typed inputs from a sample.
pub fn model_inputs(sample: &MaskedSample, kind: Kind) -> Result<(ImageInput, EnlargedInput)> {
    Ok((
        ImageInput::new(sample.corrupted.to_tch(kind), sample.mask.to_tch(kind))?,
        EnlargedInput::new(sample.corrupted_up.to_tch(kind), sample.mask_up.to_tch(kind))?,
    ))
}

#[derive(Debug)]
pub struct ForwardOutput {
    /// `F_m`, c × H/4 × W/4.
    pub feature: Tensor,
    /// `S_m`, c × H/4 × W/4.
    pub prior: Tensor,
    /// `S'_m`, d × H/4 × W/4.
    pub adapted: Tensor,
    /// `Î`, 3 × H × W in [-1, 1].
    pub output: Tensor,
}

#[derive(Debug)]
pub struct Generator {
    pub image_encoder: ImageEncoder,
    pub semantic_learner: SemanticLearner,
    pub adapter: Conv2d,
    pub decoder: Decoder,
}

impl Generator {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Self {
        let c = cfg.feature_width;
        Generator {
            image_encoder: ImageEncoder::new(store, IMAGE_ENCODER, c),
            semantic_learner: SemanticLearner::new(store, SEMANTIC_LEARNER, c, cfg.n_prior_resblocks),
            adapter: Conv2d::new(store, ADAPTER, c, cfg.prior_channels, 1, 1, Padding::Zeros(0), true),
            decoder: Decoder::new(store, DECODER, cfg),
        }
    }

    pub fn image_encode(&self, input: &ImageInput) -> Tensor {
        self.image_encoder.forward(input)
    }

    pub fn semantic_encode(&self, input: &EnlargedInput) -> Tensor {
        self.semantic_learner.forward(input)
    }

    pub fn adapt_prior(&self, prior: &Tensor) -> Tensor {
        self.adapter.forward(prior)
    }

    pub fn forward(&self, base: &ImageInput, enlarged: &EnlargedInput) -> Result<ForwardOutput> {
        let (bh, bw) = crate::nn::spatial_dims(base.corrupted());
        let (eh, ew) = crate::nn::spatial_dims(enlarged.corrupted());
        if (eh, ew) != (2 * bh, 2 * bw) || base.corrupted().size()[0] != enlarged.corrupted().size()[0] {
            return Err(SplError::Dimension(format!(
                "enlarged input {eh}x{ew} is not twice the image input {bh}x{bw}"
            )));
        }
        let feature = self.image_encode(base);
        let prior = self.semantic_encode(enlarged);
        let adapted = self.adapt_prior(&prior);
        let output = self.decoder.forward(&feature, &prior)?;
        Ok(ForwardOutput {
            feature,
            prior,
            adapted,
            output,
        })
    }
}

/// Generator and discriminator with their parameter stores.
#[derive(Debug)]
pub struct SplModel {
    config: ModelConfig,
    pub g_store: ParamStore,
    pub d_store: ParamStore,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl SplModel {
    pub fn new(config: &ModelConfig, seed: u64, kind: Kind) -> Result<Self> {
        config.validate()?;
        let mut g_store = ParamStore::new(seed, kind);
        let generator = Generator::new(&mut g_store, config);
        let mut d_store = ParamStore::new(seed ^ 0x9e37_79b9_7f4a_7c15, kind);
        let discriminator = Discriminator::new(&mut d_store, config.disc_width);
        Ok(SplModel {
            config: config.clone(),
            g_store,
            d_store,
            generator,
            discriminator,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> Kind {
        self.g_store.kind()
    }

    pub fn forward(&self, base: &ImageInput, enlarged: &EnlargedInput) -> Result<ForwardOutput> {
        self.generator.forward(base, enlarged)
    }

    pub fn forward_sample(&self, sample: &MaskedSample) -> Result<ForwardOutput> {
        let (base, enlarged) = model_inputs(sample, self.kind())?;
        self.forward(&base, &enlarged)
    }

    pub fn discriminate(&self, image: &Tensor, update: bool) -> Tensor {
        self.discriminator.forward(image, update)
    }

    /// Raw generator output without gradient tracking.
    pub fn infer(&self, sample: &MaskedSample) -> Result<ImageTensor> {
        let out = tch::no_grad(|| self.forward_sample(sample))?;
        ImageTensor::from_tch(&out.output.clamp(-1.0, 1.0))
    }
}

/// `output ⊙ mask + image ⊙ (1 − mask)`.
pub fn composite(output: &ImageTensor, image: &ImageTensor, mask: &MaskTensor) -> Result<ImageTensor> {
    let (o, i, m) = (output.data(), image.data(), mask.data());
    if o.dim() != i.dim() || (o.dim().0, o.dim().2, o.dim().3) != (m.dim().0, m.dim().2, m.dim().3) {
        return Err(SplError::Dimension(format!(
            "composite: output {:?}, image {:?}, mask {:?}",
            o.dim(),
            i.dim(),
            m.dim()
        )));
    }
    let mut out = i.clone();
    for ((n, c, y, x), v) in out.indexed_iter_mut() {
        if m[[n, 0, y, x]] == 1.0 {
            *v = o[[n, c, y, x]];
        }
    }
    ImageTensor::new(out)
}
