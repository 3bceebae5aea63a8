//! Named parameter storage and the handful of layers the networks share.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tch::{Kind, Tensor};

use crate::error::{Result, SplError};

/// Instance-normalization epsilon.
pub const IN_EPS: f64 = 1e-5;

/// Ordered registry of trainable parameters and non-trainable buffers.
///
/// Initial values are drawn from a private ChaCha stream in creation order,
/// so two stores built with the same seed and the same sequence of calls hold
/// identical values regardless of torch's global RNG.
#[derive(Debug)]
pub struct ParamStore {
    kind: Kind,
    rng: ChaCha8Rng,
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new(seed: u64, kind: Kind) -> Self {
        ParamStore {
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    fn tensor_from(&self, values: Vec<f64>, shape: &[i64]) -> Tensor {
        Tensor::from_slice(&values).view(shape).to_kind(self.kind).copy()
    }

    fn insert_param(&mut self, name: &str, t: Tensor) -> Tensor {
        assert!(
            !self.params.contains_key(name) && !self.buffers.contains_key(name),
            "duplicate parameter name {name}"
        );
        let t = t.set_requires_grad(true);
        self.params.insert(name.to_string(), t.shallow_clone());
        t
    }

    pub fn uniform(&mut self, name: &str, shape: &[i64], bound: f64) -> Tensor {
        let n = shape.iter().product::<i64>() as usize;
        let values = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        let t = self.tensor_from(values, shape);
        self.insert_param(name, t)
    }

    pub fn normal(&mut self, name: &str, shape: &[i64], std: f64) -> Tensor {
        let t = self.normal_values(shape, std);
        self.insert_param(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[i64], value: f64) -> Tensor {
        let t = Tensor::full(shape, value, (self.kind, tch::Device::Cpu));
        self.insert_param(name, t)
    }

    fn normal_values(&mut self, shape: &[i64], std: f64) -> Tensor {
        let n = shape.iter().product::<i64>() as usize;
        let values = (0..n)
            .map(|_| std * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.tensor_from(values, shape)
    }

    /// Non-trainable state initialised from a standard normal draw.
    pub fn normal_buffer(&mut self, name: &str, shape: &[i64]) -> Tensor {
        assert!(
            !self.params.contains_key(name) && !self.buffers.contains_key(name),
            "duplicate buffer name {name}"
        );
        let t = self.normal_values(shape, 1.0);
        self.buffers.insert(name.to_string(), t.shallow_clone());
        t
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    /// Parameters followed by buffers, each group in name order.
    pub fn named_tensors(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter().chain(self.buffers.iter())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    pub fn num_elements(&self) -> i64 {
        self.params.values().map(|t| t.numel() as i64).sum()
    }

    pub fn zero_grad(&self) {
        for t in self.params.values() {
            let mut t = t.shallow_clone();
            t.zero_grad();
        }
    }

    /// Stops gradient tracking for every parameter.
    pub fn freeze(&mut self) {
        for t in self.params.values_mut() {
            *t = t.set_requires_grad(false);
        }
    }

    /// Deep copies of every tensor, keyed by name.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        self.named_tensors()
            .map(|(k, v)| (k.clone(), v.detach().copy()))
            .collect()
    }

    /// Checks that `values` has exactly this store's names and shapes.
    pub fn check_compatible(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, t) in self.named_tensors() {
            let v = values
                .get(name)
                .ok_or_else(|| SplError::Load(format!("missing tensor `{name}`")))?;
            if v.size() != t.size() {
                return Err(SplError::Config(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    v.size(),
                    t.size()
                )));
            }
        }
        let expected = self.params.len() + self.buffers.len();
        if values.len() != expected {
            let extra: Vec<_> = values
                .keys()
                .filter(|k| self.get(k).is_none())
                .cloned()
                .collect();
            return Err(SplError::Load(format!("unexpected tensors {extra:?}")));
        }
        Ok(())
    }

    /// Overwrites every tensor in place. Validates everything before copying.
    pub fn load(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        self.check_compatible(values)?;
        tch::no_grad(|| {
            for (name, t) in self.named_tensors() {
                let mut dst = t.shallow_clone();
                dst.copy_(&values[name].to_kind(self.kind));
            }
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zeros(i64),
    Reflect(i64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvInit {
    /// Uniform in `±1/sqrt(fan_in)`, bias likewise.
    Default,
    /// Normal with std `sqrt(2/fan_in)`, zero bias.
    He,
}

#[derive(Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    stride: i64,
    padding: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: i64,
        c_out: i64,
        kernel: i64,
        stride: i64,
        padding: Padding,
        bias: bool,
    ) -> Self {
        Self::with_init(store, name, c_in, c_out, kernel, stride, padding, bias, ConvInit::Default)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        c_in: i64,
        c_out: i64,
        kernel: i64,
        stride: i64,
        padding: Padding,
        bias: bool,
        init: ConvInit,
    ) -> Self {
        let fan_in = (c_in * kernel * kernel) as f64;
        let shape = [c_out, c_in, kernel, kernel];
        let (weight, bias) = match init {
            ConvInit::Default => {
                let bound = 1.0 / fan_in.sqrt();
                let w = store.uniform(&format!("{name}.weight"), &shape, bound);
                let b = bias.then(|| store.uniform(&format!("{name}.bias"), &[c_out], bound));
                (w, b)
            }
            ConvInit::He => {
                let w = store.normal(&format!("{name}.weight"), &shape, (2.0 / fan_in).sqrt());
                let b = bias.then(|| store.constant(&format!("{name}.bias"), &[c_out], 0.0));
                (w, b)
            }
        };
        Conv2d {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> i64 {
        self.weight.size()[1]
    }

    pub fn out_channels(&self) -> i64 {
        self.weight.size()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        conv_with(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }
}

/// Convolution with an explicit weight (used by reparameterized layers).
pub fn conv_with(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: i64, padding: Padding) -> Tensor {
    let (x, pad) = match padding {
        Padding::Zeros(p) => (x.shallow_clone(), p),
        Padding::Reflect(0) => (x.shallow_clone(), 0),
        Padding::Reflect(p) => (x.reflection_pad2d([p, p, p, p]), 0),
    };
    x.conv2d(weight, bias, [stride, stride], [pad, pad], [1, 1], 1)
}

/// Non-parametric instance normalization over the spatial axes, using the
/// population variance.
pub fn instance_norm(x: &Tensor) -> Tensor {
    let (var, mean) = x.var_mean_dim([2i64, 3].as_slice(), false, true);
    (x - mean) / (var + IN_EPS).sqrt()
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.maximum(&(x * slope))
}

/// Nearest-neighbour resize of an `(N, C, H, W)` tensor.
pub fn resize_nearest(x: &Tensor, height: i64, width: i64) -> Tensor {
    x.upsample_nearest2d([height, width], None, None)
}

pub fn spatial_dims(x: &Tensor) -> (i64, i64) {
    let s = x.size();
    (s[s.len() - 2], s[s.len() - 1])
}

pub(crate) fn check_rank4(x: &Tensor, what: &str) -> Result<(i64, i64, i64, i64)> {
    x.size4()
        .map_err(|_| SplError::Dimension(format!("{what} must be 4-d, got {:?}", x.size())))
}
