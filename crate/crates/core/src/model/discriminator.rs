use tch::Tensor;

use crate::nn::{conv_with, leaky_relu, Padding, ParamStore};

const SN_EPS: f64 = 1e-12;

fn normalize(v: &Tensor) -> Tensor {
    v / (v.norm() + SN_EPS)
}

/// 4×4 stride-2 convolution whose weight is divided by a power-iteration
/// estimate of its largest singular value.
#[derive(Debug)]
pub struct SpectralConv {
    weight: Tensor,
    bias: Tensor,
    u: Tensor,
}

impl SpectralConv {
    pub fn new(store: &mut ParamStore, name: &str, c_in: i64, c_out: i64) -> Self {
        let bound = 1.0 / ((c_in * 16) as f64).sqrt();
        let weight = store.uniform(&format!("{name}.weight_orig"), &[c_out, c_in, 4, 4], bound);
        let bias = store.uniform(&format!("{name}.bias"), &[c_out], bound);
        let u = store.normal_buffer(&format!("{name}.u"), &[c_out]);
        tch::no_grad(|| {
            let n = normalize(&u);
            let _ = u.shallow_clone().copy_(&n);
        });
        SpectralConv { weight, bias, u }
    }

    /// Normalized weight. With `update`, one power-iteration step refreshes
    /// the stored left singular vector first.
    pub fn normalized_weight(&self, update: bool) -> Tensor {
        let w = self.weight.view([self.weight.size()[0], -1]);
        let (u, v) = tch::no_grad(|| {
            let wd = w.detach();
            let mut v = normalize(&wd.tr().mv(&self.u));
            if update {
                let u = normalize(&wd.mv(&v));
                let _ = self.u.shallow_clone().copy_(&u);
                v = normalize(&wd.tr().mv(&u));
            }
            (self.u.copy(), v)
        });
        let sigma = u.dot(&w.mv(&v));
        &self.weight / sigma
    }

    pub fn forward(&self, x: &Tensor, update: bool) -> Tensor {
        conv_with(x, &self.normalized_weight(update), Some(&self.bias), 2, Padding::Zeros(1))
    }
}

/// Patch discriminator with four spectrally normalized stride-2 stages.
#[derive(Debug)]
pub struct Discriminator {
    stages: Vec<SpectralConv>,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, width: i64) -> Self {
        let chans = [3, width, 2 * width, 4 * width, 1];
        let stages = chans
            .windows(2)
            .enumerate()
            .map(|(i, c)| SpectralConv::new(store, &format!("stage{i}"), c[0], c[1]))
            .collect();
        Discriminator { stages }
    }

    /// Per-patch scores in `(0, 1)` at `H/16 × W/16`.
    pub fn forward(&self, x: &Tensor, update: bool) -> Tensor {
        let last = self.stages.len() - 1;
        let mut x = x.shallow_clone();
        for (i, stage) in self.stages.iter().enumerate() {
            x = stage.forward(&x, update);
            if i < last {
                x = leaky_relu(&x, 0.2);
            }
        }
        x.sigmoid()
    }
}
