use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, Graph, Init, Linear, ParamStore, Var};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioNttConfig {
    pub n_conv_blocks: usize,
    pub conv_channels: usize,
    pub fc_width: usize,
    /// Dropout between the two fully-connected layers; off by default.
    pub dropout: f64,
}

impl Default for AudioNttConfig {
    fn default() -> Self {
        Self { n_conv_blocks: 3, conv_channels: 64, fc_width: 2048, dropout: 0.0 }
    }
}

/// Convolutional encoder: conv blocks with 2x2 pooling, per-frame MLP,
/// then mean + max pooling over time.
#[derive(Debug, Clone)]
pub struct AudioNtt {
    blocks: Vec<(Conv2d, BatchNorm)>,
    fc1: Linear,
    fc2: Linear,
    dropout: f64,
    n_mels: usize,
}

impl AudioNtt {
    pub fn new(cfg: &AudioNttConfig, n_mels: usize, store: &mut ParamStore, rng: &mut SeededRng) -> Result<Self> {
        let pool = 1usize << cfg.n_conv_blocks;
        if cfg.n_conv_blocks == 0 || cfg.conv_channels == 0 || cfg.fc_width == 0 {
            return Err(Error::invalid("AudioNTT widths and block count must be positive"));
        }
        if n_mels % pool != 0 {
            return Err(Error::invalid(format!("AudioNTT needs n_mels divisible by {pool}, got {n_mels}")));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        let mut blocks = Vec::new();
        let mut in_c = 1;
        for i in 0..cfg.n_conv_blocks {
            let conv = Conv2d::new(store, &format!("encoder.conv{i}"), in_c, cfg.conv_channels, 3, (1, 1), true, rng);
            let bn = BatchNorm::new(store, &format!("encoder.conv{i}"), cfg.conv_channels);
            blocks.push((conv, bn));
            in_c = cfg.conv_channels;
        }
        let frame_dim = cfg.conv_channels * (n_mels / pool);
        let fc1 = Linear::new(store, "encoder.fc1", frame_dim, cfg.fc_width, true, Init::FanIn, rng);
        let fc2 = Linear::new(store, "encoder.fc2", cfg.fc_width, cfg.fc_width, true, Init::FanIn, rng);
        Ok(Self { blocks, fc1, fc2, dropout: cfg.dropout, n_mels })
    }

    pub fn rep_dim(&self) -> usize {
        self.fc2.fan_out
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: &Tensor) -> Result<Var> {
        let (b, f, t) = (x.dim(0), x.dim(1), x.dim(2));
        if f != self.n_mels {
            return Err(Error::shape(format!("AudioNTT built for {} mel bins, got {f}", self.n_mels)));
        }
        let pool = 1usize << self.blocks.len();
        if t < pool {
            return Err(Error::ClipTooShort { samples: t, window: pool });
        }
        let mut h = g.input(x.clone().reshape(&[b, 1, f, t]));
        for (conv, bn) in &self.blocks {
            h = conv.forward(g, h);
            h = bn.forward(g, h)?;
            h = g.relu(h);
            h = g.max_pool2(h);
        }
        // [B, C, F', T'] -> [B, T', C * F']
        let s = g.shape(h);
        h = g.permute(h, &[0, 3, 1, 2]);
        h = g.reshape(h, &[s[0], s[3], s[1] * s[2]]);
        h = self.fc1.forward(g, h);
        h = g.relu(h);
        h = g.dropout(h, self.dropout);
        h = self.fc2.forward(g, h);
        h = g.relu(h);
        Ok(g.temporal_pool(h))
    }
}
