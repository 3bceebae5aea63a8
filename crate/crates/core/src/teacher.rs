//! Frozen feature extractor whose activations on the full enlarged image
//! supervise the semantic learner.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::archive;
use crate::error::{Result, SplError};
use crate::nn::{check_rank4, conv_with, leaky_relu, ConvInit, Padding, ParamStore};

/// Total stride from the enlarged input to the target map.
pub const TEACHER_STRIDE: i64 = 8;
/// Layouts that [`load_external_teacher`] knows how to read.
pub const REGISTERED_LAYOUTS: &[&str] = &[CONV_STACK];
const CONV_STACK: &str = "conv-stack";
const STANDIN_WIDTHS: [i64; 2] = [32, 64];

/// Per-channel renormalization applied to `[-1, 1]` inputs before the
/// backbone: `((x + 1) / 2 - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputNorm {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Registry description of an external backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherEntry {
    pub name: String,
    pub weights_path: PathBuf,
    /// Last layer to run, e.g. `"conv3"`.
    pub layer: String,
    pub native_stride: i64,
    pub d: i64,
    #[serde(default)]
    pub input_norm: Option<InputNorm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum TeacherSource {
    StandIn { seed: u64 },
    External(TeacherEntry),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub name: String,
    pub out_channels: i64,
    pub downsample_factor: i64,
    /// Stride of each convolution actually run.
    pub strides: Vec<i64>,
    pub source: TeacherSource,
}

#[derive(Debug)]
struct Layer {
    weight: Tensor,
    bias: Tensor,
    stride: i64,
}

/// A loaded, frozen teacher.
#[derive(Debug)]
pub struct Teacher {
    spec: TeacherSpec,
    layers: Vec<Layer>,
    native_stride: i64,
    input_norm: Option<InputNorm>,
}

impl Teacher {
    pub fn spec(&self) -> &TeacherSpec {
        &self.spec
    }

    pub fn out_channels(&self) -> i64 {
        self.spec.out_channels
    }

    /// Target map `S` at `1/8` of the enlarged input, computed without
    /// gradient tracking.
    pub fn features(&self, image_up: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = check_rank4(image_up, "teacher input")?;
        if c != 3 {
            return Err(SplError::Dimension(format!("teacher input must have 3 channels, got {c}")));
        }
        if h % TEACHER_STRIDE != 0 || w % TEACHER_STRIDE != 0 {
            return Err(SplError::Dimension(format!(
                "teacher input {h}x{w} must be divisible by {TEACHER_STRIDE}"
            )));
        }
        Ok(tch::no_grad(|| {
            let kind = self.layers[0].weight.kind();
            let mut x = image_up.detach().to_kind(kind);
            if let Some(norm) = &self.input_norm {
                let mean = Tensor::from_slice(&norm.mean).to_kind(kind).view([1, 3, 1, 1]);
                let std = Tensor::from_slice(&norm.std).to_kind(kind).view([1, 3, 1, 1]);
                x = ((x + 1.0) * 0.5 - mean) / std;
            }
            let last = self.layers.len() - 1;
            for (i, l) in self.layers.iter().enumerate() {
                x = conv_with(&x, &l.weight, Some(&l.bias), l.stride, Padding::Zeros(1));
                if i < last {
                    x = leaky_relu(&x, 0.2);
                }
            }
            if self.native_stride != TEACHER_STRIDE {
                x = x.upsample_bilinear2d([h / TEACHER_STRIDE, w / TEACHER_STRIDE], false, None, None);
            }
            x.to_kind(image_up.kind())
        }))
    }

    /// Weights keyed `conv{i}.weight` / `conv{i}.bias`.
    pub fn named_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        for (i, l) in self.layers.iter().enumerate() {
            m.insert(format!("conv{i}.weight"), l.weight.shallow_clone());
            m.insert(format!("conv{i}.bias"), l.bias.shallow_clone());
        }
        m
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let strides: Vec<String> = self.layers.iter().map(|l| l.stride.to_string()).collect();
        BTreeMap::from([
            ("layout".to_string(), CONV_STACK.to_string()),
            ("strides".to_string(), strides.join(",")),
            ("spec".to_string(), serde_json::to_string(&self.spec).expect("spec serializes")),
        ])
    }

    /// Serialized weights; used to check that training never touches them.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        archive::to_bytes(&self.named_tensors(), self.metadata())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        archive::atomic_write(path, &self.to_bytes()?)
    }

    /// Rebuilds a teacher from tensors stored alongside a checkpoint.
    pub fn from_tensors(spec: TeacherSpec, tensors: &BTreeMap<String, Tensor>) -> Result<Self> {
        let (native_stride, input_norm) = match &spec.source {
            TeacherSource::StandIn { .. } => (TEACHER_STRIDE, None),
            TeacherSource::External(e) => (e.native_stride, e.input_norm.clone()),
        };
        let layers = conv_stack_layers(tensors, None, &spec.strides)?;
        let teacher = Teacher {
            spec,
            layers,
            native_stride,
            input_norm,
        };
        teacher.check_channels()?;
        Ok(teacher)
    }

    fn check_channels(&self) -> Result<()> {
        let got = self.layers.last().map(|l| l.weight.size()[0]).unwrap_or(0);
        if got != self.spec.out_channels {
            return Err(SplError::Config(format!(
                "teacher {} produces {got} channels but d = {}",
                self.spec.name, self.spec.out_channels
            )));
        }
        Ok(())
    }
}

/// Deterministic stand-in: three 4×4 stride-2 convolutions `3→32→64→d`.
pub fn build_standin_teacher(seed: u64, d: i64, kind: Kind) -> Result<Teacher> {
    if d < 1 {
        return Err(SplError::Config(format!("teacher d must be >= 1, got {d}")));
    }
    let mut store = ParamStore::new(seed, kind);
    let widths = [3, STANDIN_WIDTHS[0], STANDIN_WIDTHS[1], d];
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, c)| {
            let conv = crate::nn::Conv2d::with_init(
                &mut store,
                &format!("conv{i}"),
                c[0],
                c[1],
                4,
                2,
                Padding::Zeros(1),
                true,
                ConvInit::He,
            );
            Layer {
                weight: conv.weight.detach(),
                bias: conv.bias.expect("bias").detach(),
                stride: 2,
            }
        })
        .collect();
    Ok(Teacher {
        spec: TeacherSpec {
            name: "standin".to_string(),
            out_channels: d,
            downsample_factor: TEACHER_STRIDE,
            strides: vec![2; 3],
            source: TeacherSource::StandIn { seed },
        },
        layers,
        native_stride: TEACHER_STRIDE,
        input_norm: None,
    })
}

fn conv_stack_layers(
    tensors: &BTreeMap<String, Tensor>,
    upto: Option<usize>,
    strides: &[i64],
) -> Result<Vec<Layer>> {
    let n = upto.map(|k| k + 1).unwrap_or(strides.len());
    if n == 0 || n > strides.len() {
        return Err(SplError::Config(format!("layer index {n} outside a {}-layer stack", strides.len())));
    }
    let mut layers = Vec::with_capacity(n);
    let mut c_prev = 3;
    for (i, &stride) in strides.iter().enumerate().take(n) {
        let get = |suffix: &str| {
            tensors
                .get(&format!("conv{i}.{suffix}"))
                .ok_or_else(|| SplError::Load(format!("missing tensor conv{i}.{suffix}")))
        };
        let (weight, bias) = (get("weight")?, get("bias")?);
        let ws = weight.size();
        if ws.len() != 4 || ws[1] != c_prev || bias.size() != [ws[0]] {
            return Err(SplError::Load(format!(
                "conv{i} has weight {ws:?} and bias {:?}, expected {c_prev} input channels",
                bias.size()
            )));
        }
        c_prev = ws[0];
        layers.push(Layer {
            weight: weight.detach().copy(),
            bias: bias.detach().copy(),
            stride,
        });
    }
    Ok(layers)
}

/// Loads a registered backbone and truncates it at `entry.layer`.
pub fn load_external_teacher(entry: &TeacherEntry, kind: Kind) -> Result<Teacher> {
    let (tensors, meta) = archive::read(&entry.weights_path)?;
    let layout = meta.get("layout").map(String::as_str).unwrap_or("<none>");
    if !REGISTERED_LAYOUTS.contains(&layout) {
        return Err(SplError::UnsupportedBackbone(format!(
            "{}: layout {layout:?} is not one of {REGISTERED_LAYOUTS:?}",
            entry.name
        )));
    }
    let strides = meta
        .get("strides")
        .ok_or_else(|| SplError::Load(format!("{}: missing strides metadata", entry.name)))?
        .split(',')
        .map(|s| s.trim().parse::<i64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| SplError::Load(format!("{}: bad strides metadata: {e}", entry.name)))?;
    let idx: usize = entry
        .layer
        .strip_prefix("conv")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| SplError::Config(format!("teacher layer {:?} is not of the form convN", entry.layer)))?;
    let layers: Vec<Layer> = conv_stack_layers(&tensors, Some(idx), &strides)?
        .into_iter()
        .map(|l| Layer {
            weight: l.weight.to_kind(kind),
            bias: l.bias.to_kind(kind),
            stride: l.stride,
        })
        .collect();
    let stride: i64 = layers.iter().map(|l| l.stride).product();
    if stride != entry.native_stride {
        return Err(SplError::Config(format!(
            "{}: layer {} has stride {stride}, registry says {}",
            entry.name, entry.layer, entry.native_stride
        )));
    }
    let teacher = Teacher {
        spec: TeacherSpec {
            name: entry.name.clone(),
            out_channels: entry.d,
            downsample_factor: TEACHER_STRIDE,
            strides: layers.iter().map(|l| l.stride).collect(),
            source: TeacherSource::External(entry.clone()),
        },
        layers,
        native_stride: entry.native_stride,
        input_norm: entry.input_norm.clone(),
    };
    teacher.check_channels()?;
    Ok(teacher)
}

/// Writes an arbitrary conv stack in the registered layout; handy for
/// packaging converted backbones.
pub fn write_conv_stack(path: &Path, tensors: &BTreeMap<String, Tensor>, strides: &[i64]) -> Result<()> {
    let strides: Vec<String> = strides.iter().map(i64::to_string).collect();
    let meta = BTreeMap::from([
        ("layout".to_string(), CONV_STACK.to_string()),
        ("strides".to_string(), strides.join(",")),
    ]);
    archive::atomic_write(path, &archive::to_bytes(tensors, meta)?)
}
