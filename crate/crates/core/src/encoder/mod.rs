//! Encoders mapping a batch of log-mel spectrograms to representations.

mod ntt;
mod vit;

use serde::{Deserialize, Serialize};

use crate::augment::MaskPlan;
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamStore, Var};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use ntt::{AudioNtt, AudioNttConfig};
pub use vit::{patchify, sinusoidal_posenc, unpatchify, Vit, VitConfig, VitSize, VitVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderConfig {
    AudioNtt(AudioNttConfig),
    Vit(VitConfig),
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Vit(VitConfig::default())
    }
}

/// Result of an encoder forward pass.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `[B, rep_dim]` representations.
    pub rep: Var,
    /// Sequence length seen by the transformer blocks, CLS included.
    pub attention_tokens: Option<usize>,
}

#[derive(Debug, Clone)]
pub enum Encoder {
    AudioNtt(AudioNtt),
    Vit(Vit),
}

impl Encoder {
    /// Registers the encoder's parameters for inputs of `n_mels x n_frames`.
    pub fn new(cfg: &EncoderConfig, n_mels: usize, n_frames: usize, store: &mut ParamStore, rng: &mut SeededRng) -> Result<Self> {
        Ok(match cfg {
            EncoderConfig::AudioNtt(c) => Encoder::AudioNtt(AudioNtt::new(c, n_mels, store, rng)?),
            EncoderConfig::Vit(c) => Encoder::Vit(Vit::new(c, n_mels, n_frames, store, rng)?),
        })
    }

    pub fn rep_dim(&self) -> usize {
        match self {
            Encoder::AudioNtt(e) => e.rep_dim(),
            Encoder::Vit(e) => e.dim(),
        }
    }

    /// Number of tokens a transformer encoder produces before masking.
    pub fn n_patches(&self) -> Option<usize> {
        match self {
            Encoder::AudioNtt(_) => None,
            Encoder::Vit(e) => Some(e.n_patches()),
        }
    }

    /// Encodes a `[B, F, T]` batch. `masks` (one per sample) drop patches
    /// before the first transformer block and are rejected for AudioNTT.
    pub fn forward(&self, g: &mut Graph<'_>, x: &Tensor, masks: Option<&[MaskPlan]>) -> Result<EncoderOutput> {
        if x.ndim() != 3 {
            return Err(Error::shape(format!("encoder input must be [B, F, T], got {:?}", x.shape())));
        }
        match self {
            Encoder::AudioNtt(e) => {
                if masks.is_some() {
                    return Err(Error::invalid("patch masking needs a transformer encoder"));
                }
                Ok(EncoderOutput { rep: e.forward(g, x)?, attention_tokens: None })
            }
            Encoder::Vit(e) => e.forward(g, x, masks),
        }
    }
}

/// Stacks spectrograms into a `[B, F, T]` tensor.
pub fn stack_batch(specs: &[crate::dsp::Spectrogram]) -> Result<Tensor> {
    let first = specs.first().ok_or(Error::DegenerateBatch)?;
    let (f, t) = first.shape();
    let mut data = Vec::with_capacity(specs.len() * f * t);
    for s in specs {
        if s.shape() != (f, t) {
            return Err(Error::shape(format!("batch mixes shapes {:?} and {:?}", (f, t), s.shape())));
        }
        data.extend_from_slice(&s.values);
    }
    Ok(Tensor::from_vec(&[specs.len(), f, t], data))
}
