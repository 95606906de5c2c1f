//! Parameterized layers: each registers its parameters in a [`ParamStore`]
//! at construction and records ops on a [`Graph`] when applied.

use super::graph::{Graph, Var};
use super::params::{init, BufferId, ParamId, ParamKind, ParamStore};
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// How a layer's weights are initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn,
    /// Normal truncated at two standard deviations.
    TruncNormal(f64),
}

impl Init {
    fn tensor(self, shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> Tensor {
        match self {
            Init::FanIn => init::fan_in_uniform(shape, fan_in, rng),
            Init::TruncNormal(std) => init::trunc_normal(shape, std, rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, init: Init, rng: &mut SeededRng) -> Self {
        let weight = store.add(format!("{name}.weight"), init.tensor(&[fan_in, fan_out], fan_in, rng), ParamKind::Weight);
        let bias = bias.then(|| {
            let b = match init {
                Init::FanIn => init::fan_in_uniform(&[fan_out], fan_in, rng),
                Init::TruncNormal(_) => Tensor::zeros(&[fan_out]),
            };
            store.add(format!("{name}.bias"), b, ParamKind::BiasOrNorm)
        });
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: (usize, usize),
        bias: bool,
        rng: &mut SeededRng,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            init::fan_in_uniform(&[out_c, in_c, kernel, kernel], fan_in, rng),
            ParamKind::Weight,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), init::fan_in_uniform(&[out_c], fan_in, rng), ParamKind::BiasOrNorm));
        Self { weight, bias, stride, pad: (kernel / 2, kernel / 2) }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Batch normalization over axis 1 with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.norm.weight"), Tensor::full(&[channels], 1.0), ParamKind::BiasOrNorm),
            beta: store.add(format!("{name}.norm.bias"), Tensor::zeros(&[channels]), ParamKind::BiasOrNorm),
            running_mean: store.add_buffer(format!("{name}.norm.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.norm.running_var"), Tensor::full(&[channels], 1.0)),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.batch_norm(x, gamma, beta, (self.running_mean, self.running_var), self.momentum, self.eps)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.norm.weight"), Tensor::full(&[width], 1.0), ParamKind::BiasOrNorm),
            beta: store.add(format!("{name}.norm.bias"), Tensor::zeros(&[width]), ParamKind::BiasOrNorm),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, self.eps)
    }
}
