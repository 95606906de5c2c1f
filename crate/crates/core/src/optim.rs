//! LARS, AdamW and momentum SGD over a [`ParamStore`], with biases and
//! normalization parameters split into their own group.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LarsConfig {
    pub lr_weights: f64,
    pub lr_biases: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub eta: f64,
}

impl Default for LarsConfig {
    fn default() -> Self {
        Self { lr_weights: 0.4, lr_biases: 0.0048, weight_decay: 1e-5, momentum: 0.9, eta: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 6.25e-5, weight_decay: 0.24, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 0.05, momentum: 0.9, weight_decay: 1e-5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Lars(LarsConfig),
    Adamw(AdamWConfig),
    Sgd(SgdConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Lars(LarsConfig::default())
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            OptimizerConfig::Lars(c) => {
                c.lr_weights > 0.0 && c.lr_biases > 0.0 && c.weight_decay >= 0.0 && (0.0..1.0).contains(&c.momentum) && c.eta > 0.0
            }
            OptimizerConfig::Adamw(c) => {
                c.lr > 0.0 && c.weight_decay >= 0.0 && (0.0..1.0).contains(&c.beta1) && (0.0..1.0).contains(&c.beta2) && c.epsilon > 0.0
            }
            OptimizerConfig::Sgd(c) => c.lr > 0.0 && c.weight_decay >= 0.0 && (0.0..1.0).contains(&c.momentum),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("optimizer settings out of range: {self:?}")))
        }
    }

    /// The same recipe with every learning rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        match &mut out {
            OptimizerConfig::Lars(c) => {
                c.lr_weights *= factor;
                c.lr_biases *= factor;
            }
            OptimizerConfig::Adamw(c) => c.lr *= factor,
            OptimizerConfig::Sgd(c) => c.lr *= factor,
        }
        out
    }
}

/// Linear learning-rate scaling with batch size.
pub fn scale_lr(lr_ref: f64, batch_ref: usize, batch: usize) -> f64 {
    assert!(batch_ref > 0, "reference batch size must be positive");
    lr_ref * batch as f64 / batch_ref as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay to zero over the run.
    Cosine,
}

impl LrSchedule {
    pub fn multiplier(self, step: u64, total_steps: u64) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let frac = if total_steps == 0 { 0.0 } else { (step as f64 / total_steps as f64).min(1.0) };
                0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// Hyperparameters shared by one class of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub kind: ParamKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub lars_adaptation: bool,
    pub members: Vec<ParamId>,
}

/// Splits the store into a weight group and a bias/normalization group.
pub fn param_groups(store: &ParamStore, cfg: &OptimizerConfig) -> Vec<ParamGroup> {
    let (w_lr, b_lr, wd, lars) = match cfg {
        OptimizerConfig::Lars(c) => (c.lr_weights, c.lr_biases, c.weight_decay, true),
        OptimizerConfig::Adamw(c) => (c.lr, c.lr, c.weight_decay, false),
        OptimizerConfig::Sgd(c) => (c.lr, c.lr, c.weight_decay, false),
    };
    let members = |kind| store.ids().filter(|&id| store.param(id).kind == kind).collect();
    vec![
        ParamGroup { kind: ParamKind::Weight, lr: w_lr, weight_decay: wd, lars_adaptation: lars, members: members(ParamKind::Weight) },
        ParamGroup { kind: ParamKind::BiasOrNorm, lr: b_lr, weight_decay: 0.0, lars_adaptation: false, members: members(ParamKind::BiasOrNorm) },
    ]
}

/// Optimizer with per-parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    groups: Vec<ParamGroup>,
    /// One slot per parameter: momentum (LARS/SGD) or first moment (AdamW).
    first: Vec<Tensor>,
    /// AdamW second moments; empty otherwise.
    second: Vec<Tensor>,
    step: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let zeros = || store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        let second = if matches!(cfg, OptimizerConfig::Adamw(_)) { zeros() } else { Vec::new() };
        Ok(Self { cfg, groups: param_groups(store, &cfg), first: zeros(), second, step: 0 })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Missing gradients count as zero; `lr_mult` scales every learning rate.
    pub fn step(&mut self, store: &mut ParamStore, grads: &HashMap<ParamId, Tensor>, lr_mult: f64) -> Result<()> {
        for (id, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(store.param(*id).name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        for group in &self.groups {
            let lr = group.lr * lr_mult;
            for &id in &group.members {
                let zero;
                let g = match grads.get(&id) {
                    Some(g) => g,
                    None => {
                        zero = Tensor::zeros(store.get(id).shape());
                        &zero
                    }
                };
                let p = store.get_mut(id);
                match self.cfg {
                    OptimizerConfig::Lars(c) => {
                        let mut gp = g.clone();
                        if group.weight_decay > 0.0 {
                            gp.data_mut().iter_mut().zip(p.data()).for_each(|(g, w)| *g += group.weight_decay * w);
                        }
                        let tau = if group.lars_adaptation {
                            let (pn, gn) = (p.norm(), gp.norm());
                            if pn > 0.0 && gn > 0.0 {
                                c.eta * pn / gn
                            } else {
                                1.0
                            }
                        } else {
                            1.0
                        };
                        let m = &mut self.first[id.0];
                        m.data_mut().iter_mut().zip(gp.data()).for_each(|(m, g)| *m = c.momentum * *m + tau * g);
                        p.data_mut().iter_mut().zip(m.data()).for_each(|(w, m)| *w -= lr * m);
                    }
                    OptimizerConfig::Sgd(c) => {
                        let m = &mut self.first[id.0];
                        for ((m, w), g) in m.data_mut().iter_mut().zip(p.data_mut()).zip(g.data()) {
                            let gp = g + group.weight_decay * *w;
                            *m = c.momentum * *m + gp;
                            *w -= lr * *m;
                        }
                    }
                    OptimizerConfig::Adamw(c) => {
                        let bc1 = 1.0 - c.beta1.powi(t);
                        let bc2 = 1.0 - c.beta2.powi(t);
                        let decay = 1.0 - lr * group.weight_decay;
                        let m = &mut self.first[id.0];
                        let v = &mut self.second[id.0];
                        for (((w, g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                            *w *= decay;
                            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                            *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// State tensors for checkpointing, keyed by parameter name.
    pub fn state_tensors(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (p, m) in store.params().iter().zip(&self.first) {
            out.push((format!("optim.first.{}", p.name), m.clone()));
        }
        for (p, v) in store.params().iter().zip(&self.second) {
            out.push((format!("optim.second.{}", p.name), v.clone()));
        }
        out
    }

    /// Restores state written by [`Optimizer::state_tensors`].
    pub fn load_state(&mut self, store: &ParamStore, step: u64, tensors: &HashMap<String, Tensor>) -> Result<()> {
        let fetch = |prefix: &str, slots: &mut Vec<Tensor>| -> Result<()> {
            for (p, slot) in store.params().iter().zip(slots.iter_mut()) {
                let key = format!("optim.{prefix}.{}", p.name);
                let t = tensors.get(&key).ok_or_else(|| Error::CorruptCheckpoint(format!("missing optimizer tensor `{key}`")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::CorruptCheckpoint(format!("optimizer tensor `{key}` has shape {:?}", t.shape())));
                }
                *slot = t.clone();
            }
            Ok(())
        };
        fetch("first", &mut self.first)?;
        fetch("second", &mut self.second)?;
        self.step = step;
        Ok(())
    }
}
