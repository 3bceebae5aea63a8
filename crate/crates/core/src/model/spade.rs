use tch::Tensor;

use crate::error::{Result, SplError};
use crate::nn::{check_rank4, instance_norm, Conv2d, Padding, ParamStore};

/// Spatially-adaptive modulation: `γ(prior) · IN(x) + β(prior)`.
#[derive(Debug)]
pub struct SpadeModulation {
    pub shared: Conv2d,
    pub gamma: Conv2d,
    pub beta: Conv2d,
}

impl SpadeModulation {
    pub fn new(store: &mut ParamStore, name: &str, feature: i64, prior: i64, hidden: i64) -> Self {
        let shared = Conv2d::new(store, &format!("{name}.shared"), prior, hidden, 3, 1, Padding::Zeros(1), true);
        let gamma = Conv2d::new(store, &format!("{name}.gamma"), hidden, feature, 3, 1, Padding::Zeros(1), true);
        let beta = Conv2d::new(store, &format!("{name}.beta"), hidden, feature, 3, 1, Padding::Zeros(1), true);
        // Start near the identity modulation so early training sees plain IN.
        tch::no_grad(|| {
            let _ = gamma.bias.as_ref().expect("gamma bias").shallow_clone().fill_(1.0);
        });
        SpadeModulation { shared, gamma, beta }
    }

    pub fn params(&self, prior: &Tensor) -> (Tensor, Tensor) {
        let h = self.shared.forward(prior).relu();
        (self.gamma.forward(&h), self.beta.forward(&h))
    }

    pub fn forward(&self, x: &Tensor, prior: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = check_rank4(x, "modulated feature")?;
        let (_, _, ph, pw) = check_rank4(prior, "prior")?;
        if (h, w) != (ph, pw) {
            return Err(SplError::Dimension(format!(
                "feature {h}x{w} and prior {ph}x{pw} are not aligned"
            )));
        }
        let (gamma, beta) = self.params(prior);
        Ok(gamma * instance_norm(x) + beta)
    }
}

/// Residual block with two modulated stages and a modulated 1×1 skip when the
/// width changes.
#[derive(Debug)]
pub struct SpadeResBlock {
    spade0: SpadeModulation,
    conv0: Conv2d,
    spade1: SpadeModulation,
    conv1: Conv2d,
    skip: Option<(SpadeModulation, Conv2d)>,
}

impl SpadeResBlock {
    pub fn new(store: &mut ParamStore, name: &str, fin: i64, fout: i64, prior: i64, hidden: i64) -> Self {
        let mid = fin.min(fout);
        let skip = (fin != fout).then(|| {
            (
                SpadeModulation::new(store, &format!("{name}.spade_s"), fin, prior, hidden),
                Conv2d::new(store, &format!("{name}.conv_s"), fin, fout, 1, 1, Padding::Zeros(0), false),
            )
        });
        SpadeResBlock {
            spade0: SpadeModulation::new(store, &format!("{name}.spade0"), fin, prior, hidden),
            conv0: Conv2d::new(store, &format!("{name}.conv0"), fin, mid, 3, 1, Padding::Zeros(1), true),
            spade1: SpadeModulation::new(store, &format!("{name}.spade1"), mid, prior, hidden),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), mid, fout, 3, 1, Padding::Zeros(1), true),
            skip,
        }
    }

    pub fn forward(&self, x: &Tensor, prior: &Tensor) -> Result<Tensor> {
        let dx = self.conv0.forward(&self.spade0.forward(x, prior)?.relu());
        let dx = self.conv1.forward(&self.spade1.forward(&dx, prior)?.relu());
        let skip = match &self.skip {
            Some((spade, conv)) => conv.forward(&spade.forward(x, prior)?),
            None => x.shallow_clone(),
        };
        Ok(skip + dx)
    }
}

/// Unconditioned counterpart used when the prior is concatenated instead.
#[derive(Debug)]
pub struct PlainResBlock {
    conv0: Conv2d,
    conv1: Conv2d,
    skip: Option<Conv2d>,
}

impl PlainResBlock {
    pub fn new(store: &mut ParamStore, name: &str, fin: i64, fout: i64) -> Self {
        let mid = fin.min(fout);
        PlainResBlock {
            conv0: Conv2d::new(store, &format!("{name}.conv0"), fin, mid, 3, 1, Padding::Zeros(1), true),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), mid, fout, 3, 1, Padding::Zeros(1), true),
            skip: (fin != fout)
                .then(|| Conv2d::new(store, &format!("{name}.conv_s"), fin, fout, 1, 1, Padding::Zeros(0), false)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let dx = self.conv0.forward(&instance_norm(x).relu());
        let dx = self.conv1.forward(&instance_norm(&dx).relu());
        let skip = match &self.skip {
            Some(conv) => conv.forward(&instance_norm(x)),
            None => x.shallow_clone(),
        };
        skip + dx
    }
}
