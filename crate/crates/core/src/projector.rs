//! Projector head mapping representations to the embeddings the loss sees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Graph, Init, Linear, ParamStore, Var};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectorConfig {
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub n_hidden_layers: usize,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        Self { hidden_dim: 8192, out_dim: 1048, n_hidden_layers: 1 }
    }
}

impl ProjectorConfig {
    /// The smaller output width used for ablation runs.
    pub fn ablation() -> Self {
        Self { out_dim: 256, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_dim == 0 || (self.n_hidden_layers > 0 && self.hidden_dim == 0) {
            return Err(Error::invalid("projector widths must be positive"));
        }
        Ok(())
    }
}

/// `n_hidden_layers` x (linear -> batch norm -> ReLU), then a final linear layer.
#[derive(Debug, Clone)]
pub struct Projector {
    hidden: Vec<(Linear, BatchNorm)>,
    out: Linear,
}

impl Projector {
    pub fn new(cfg: &ProjectorConfig, in_dim: usize, store: &mut ParamStore, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        if in_dim == 0 {
            return Err(Error::invalid("projector input width must be positive"));
        }
        let mut hidden = Vec::new();
        let mut width = in_dim;
        for i in 0..cfg.n_hidden_layers {
            let name = format!("projector.hidden{i}");
            // The following batch norm makes a bias redundant.
            let lin = Linear::new(store, &name, width, cfg.hidden_dim, false, Init::FanIn, rng);
            hidden.push((lin, BatchNorm::new(store, &name, cfg.hidden_dim)));
            width = cfg.hidden_dim;
        }
        let out = Linear::new(store, "projector.out", width, cfg.out_dim, false, Init::FanIn, rng);
        Ok(Self { hidden, out })
    }

    pub fn out_dim(&self) -> usize {
        self.out.fan_out
    }

    /// Widths from input to output.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.hidden.iter().map(|(l, _)| l.fan_in).collect();
        dims.push(self.out.fan_in);
        dims.push(self.out.fan_out);
        dims
    }

    pub fn output_layer(&self) -> &Linear {
        &self.out
    }

    pub fn forward(&self, g: &mut Graph<'_>, y: Var) -> Result<Var> {
        let mut h = y;
        for (lin, bn) in &self.hidden {
            h = lin.forward(g, h);
            h = bn.forward(g, h)?;
            h = g.relu(h);
        }
        Ok(self.out.forward(g, h))
    }
}
