use tch::Tensor;

use super::spade::{PlainResBlock, SpadeResBlock};
use super::ModelConfig;
use crate::error::{Result, SplError};
use crate::nn::{instance_norm, resize_nearest, spatial_dims, Conv2d, Padding, ParamStore};

#[derive(Debug)]
enum Blocks {
    Spade(Vec<SpadeResBlock>),
    Concat(Vec<PlainResBlock>),
}

/// Generator: residual blocks at `H/4` conditioned on the prior, two
/// nearest-neighbour ×2 stages and a tanh output convolution.
#[derive(Debug)]
pub struct Decoder {
    blocks: Blocks,
    up: [Conv2d; 2],
    out: Conv2d,
    width: i64,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Self {
        let c = cfg.feature_width;
        let blocks = if cfg.use_spade {
            Blocks::Spade(
                (0..cfg.n_spade_blocks)
                    .map(|i| SpadeResBlock::new(store, &format!("{name}.block{i}"), c, c, c, cfg.spade_hidden))
                    .collect(),
            )
        } else {
            Blocks::Concat(
                (0..cfg.n_spade_blocks)
                    .map(|i| {
                        let fin = if i == 0 { 2 * c } else { c };
                        PlainResBlock::new(store, &format!("{name}.block{i}"), fin, c)
                    })
                    .collect(),
            )
        };
        let (w1, w2) = ((c / 2).max(1), (c / 4).max(1));
        Decoder {
            blocks,
            up: [
                Conv2d::new(store, &format!("{name}.up0"), c, w1, 3, 1, Padding::Zeros(1), true),
                Conv2d::new(store, &format!("{name}.up1"), w1, w2, 3, 1, Padding::Zeros(1), true),
            ],
            out: Conv2d::new(store, &format!("{name}.out"), w2, 3, 7, 1, Padding::Reflect(3), true),
            width: c,
        }
    }

    pub fn forward(&self, feature: &Tensor, prior: &Tensor) -> Result<Tensor> {
        let (fs, ps) = (feature.size(), prior.size());
        if fs.len() != 4 || ps.len() != 4 || fs[1] != self.width || ps[1] != self.width {
            return Err(SplError::Config(format!(
                "decoder of width {} got feature {fs:?} and prior {ps:?}",
                self.width
            )));
        }
        if spatial_dims(feature) != spatial_dims(prior) {
            return Err(SplError::Dimension(format!(
                "feature {fs:?} and prior {ps:?} are not spatially aligned"
            )));
        }
        let mut x = match &self.blocks {
            Blocks::Spade(blocks) => {
                let mut x = feature.shallow_clone();
                for b in blocks {
                    x = b.forward(&x, prior)?;
                }
                x
            }
            Blocks::Concat(blocks) => {
                let mut x = Tensor::cat(&[feature, prior], 1);
                for b in blocks {
                    x = b.forward(&x);
                }
                x
            }
        };
        for conv in &self.up {
            let (h, w) = spatial_dims(&x);
            x = instance_norm(&conv.forward(&resize_nearest(&x, 2 * h, 2 * w))).relu();
        }
        Ok(self.out.forward(&x).tanh())
    }
}
