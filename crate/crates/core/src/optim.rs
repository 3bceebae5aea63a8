use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tch::Tensor;

use crate::error::{Result, SplError};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are keyed by parameter name; a
/// parameter without a gradient is left untouched for that step.
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    steps: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            steps: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, store: &ParamStore, lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        tch::no_grad(|| {
            for (name, p) in store.params() {
                let g = p.grad();
                if !g.defined() {
                    continue;
                }
                let m = self.m.entry(name.clone()).or_insert_with(|| p.zeros_like());
                let v = self.v.entry(name.clone()).or_insert_with(|| p.zeros_like());
                let _ = m.g_mul_scalar_(beta1).g_add_(&(&g * (1.0 - beta1)));
                let _ = v.g_mul_scalar_(beta2).g_add_(&(&g * &g * (1.0 - beta2)));
                let update = (&*m / c1) / ((&*v / c2).sqrt() + eps) * lr;
                let _ = p.shallow_clone().g_sub_(&update);
            }
        });
    }

    /// Moments as `{prefix}.m.{name}` / `{prefix}.v.{name}`.
    pub fn state_tensors(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, t) in &self.m {
            out.insert(format!("{prefix}.m.{name}"), t.shallow_clone());
        }
        for (name, t) in &self.v {
            out.insert(format!("{prefix}.v.{name}"), t.shallow_clone());
        }
        out
    }

    /// Rebuilds state from [`Adam::state_tensors`] output without touching
    /// `self` unless every entry names a parameter of `store` with a matching
    /// shape.
    pub fn restore(
        cfg: AdamConfig,
        steps: u64,
        prefix: &str,
        tensors: &BTreeMap<String, Tensor>,
        store: &ParamStore,
    ) -> Result<Self> {
        let mut opt = Adam::new(cfg);
        opt.steps = steps;
        let (mp, vp) = (format!("{prefix}.m."), format!("{prefix}.v."));
        for (key, t) in tensors {
            let (map, name) = if let Some(n) = key.strip_prefix(&mp) {
                (&mut opt.m, n)
            } else if let Some(n) = key.strip_prefix(&vp) {
                (&mut opt.v, n)
            } else {
                continue;
            };
            let p = store
                .params()
                .get(name)
                .ok_or_else(|| SplError::Load(format!("optimizer state for unknown parameter `{name}`")))?;
            if p.size() != t.size() {
                return Err(SplError::Config(format!(
                    "optimizer state `{key}` has shape {:?}, parameter has {:?}",
                    t.size(),
                    p.size()
                )));
            }
            map.insert(name.to_string(), t.to_kind(p.kind()).copy());
        }
        Ok(opt)
    }
}
