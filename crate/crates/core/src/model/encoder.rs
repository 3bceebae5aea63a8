use tch::Tensor;

use super::{EnlargedInput, ImageInput};
use crate::nn::{instance_norm, leaky_relu, Conv2d, Padding, ParamStore};

const SLOPE: f64 = 0.2;

/// Image encoder: 7×7 stem then two stride-2 4×4 downsampling convolutions.
#[derive(Debug)]
pub struct ImageEncoder {
    stem: Conv2d,
    down: [Conv2d; 2],
}

impl ImageEncoder {
    pub fn new(store: &mut ParamStore, name: &str, width: i64) -> Self {
        let (w0, w1) = ((width / 4).max(1), (width / 2).max(1));
        ImageEncoder {
            stem: Conv2d::new(store, &format!("{name}.stem"), 4, w0, 7, 1, Padding::Reflect(3), true),
            down: [
                Conv2d::new(store, &format!("{name}.down0"), w0, w1, 4, 2, Padding::Zeros(1), true),
                Conv2d::new(store, &format!("{name}.down1"), w1, width, 4, 2, Padding::Zeros(1), true),
            ],
        }
    }

    /// `(corrupted ‖ mask)` at `H×W` → feature at `H/4×W/4`.
    pub fn forward(&self, input: &ImageInput) -> Tensor {
        let x = Tensor::cat(&[input.corrupted(), input.mask()], 1);
        let mut x = leaky_relu(&instance_norm(&self.stem.forward(&x)), SLOPE);
        for conv in &self.down {
            x = leaky_relu(&instance_norm(&conv.forward(&x)), SLOPE);
        }
        x
    }
}

#[derive(Debug)]
struct ResBlock {
    conv0: Conv2d,
    conv1: Conv2d,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, width: i64) -> Self {
        ResBlock {
            conv0: Conv2d::new(store, &format!("{name}.conv0"), width, width, 3, 1, Padding::Zeros(1), true),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), width, width, 3, 1, Padding::Zeros(1), true),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let h = leaky_relu(&instance_norm(&self.conv0.forward(x)), SLOPE);
        x + instance_norm(&self.conv1.forward(&h))
    }
}

/// Semantic learner: three stride-2 convolutions on the enlarged input
/// followed by residual blocks; total stride 8.
#[derive(Debug)]
pub struct SemanticLearner {
    down: [Conv2d; 3],
    blocks: Vec<ResBlock>,
}

impl SemanticLearner {
    pub fn new(store: &mut ParamStore, name: &str, width: i64, n_blocks: usize) -> Self {
        let (w0, w1) = ((width / 4).max(1), (width / 2).max(1));
        let down = [
            Conv2d::new(store, &format!("{name}.down0"), 4, w0, 4, 2, Padding::Zeros(1), true),
            Conv2d::new(store, &format!("{name}.down1"), w0, w1, 4, 2, Padding::Zeros(1), true),
            Conv2d::new(store, &format!("{name}.down2"), w1, width, 4, 2, Padding::Zeros(1), true),
        ];
        let blocks = (0..n_blocks)
            .map(|i| ResBlock::new(store, &format!("{name}.res{i}"), width))
            .collect();
        SemanticLearner { down, blocks }
    }

    /// `(corrupted' ‖ mask')` at `2H×2W` → prior at `H/4×W/4`.
    pub fn forward(&self, input: &EnlargedInput) -> Tensor {
        let mut x = Tensor::cat(&[input.corrupted(), input.mask()], 1);
        for conv in &self.down {
            x = leaky_relu(&instance_norm(&conv.forward(&x)), SLOPE);
        }
        for block in &self.blocks {
            x = block.forward(&x);
        }
        x
    }
}
