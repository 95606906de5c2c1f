use serde::{Deserialize, Serialize};

use super::EncoderOutput;
use crate::augment::MaskPlan;
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, Graph, Init, LayerNorm, Linear, ParamKind, ParamStore, Var};
use crate::nn::init::trunc_normal;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VitVariant {
    /// Linear embedding of flattened patches.
    Vit,
    /// Convolutional stem producing the same token grid as patchification.
    VitC,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VitSize {
    B,
    S,
    T,
}

impl VitSize {
    /// `(width, depth, heads)`.
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            VitSize::B => (768, 12, 12),
            VitSize::S => (384, 12, 6),
            VitSize::T => (192, 12, 3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VitConfig {
    pub variant: VitVariant,
    pub size: VitSize,
    pub patch_h: usize,
    pub patch_w: usize,
    /// Overrides of the size table, for small experiments.
    pub dim: Option<usize>,
    pub depth: Option<usize>,
    pub heads: Option<usize>,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self { variant: VitVariant::VitC, size: VitSize::T, patch_h: 16, patch_w: 8, dim: None, depth: None, heads: None }
    }
}

impl VitConfig {
    /// `(width, depth, heads)` after overrides.
    pub fn resolved(&self) -> (usize, usize, usize) {
        let (d, l, h) = self.size.dims();
        (self.dim.unwrap_or(d), self.depth.unwrap_or(l), self.heads.unwrap_or(h))
    }
}

/// Splits a spectrogram into a frequency-major grid of flattened patches: `[N, patch_h * patch_w]`.
pub fn patchify(s: &Spectrogram, patch_h: usize, patch_w: usize) -> Result<Tensor> {
    let (f, t) = s.shape();
    check_divisible(f, t, patch_h, patch_w)?;
    let (gh, gw) = (f / patch_h, t / patch_w);
    let mut out = Vec::with_capacity(f * t);
    for pi in 0..gh {
        for pj in 0..gw {
            for i in 0..patch_h {
                let row = (pi * patch_h + i) * t + pj * patch_w;
                out.extend_from_slice(&s.values[row..row + patch_w]);
            }
        }
    }
    Ok(Tensor::from_vec(&[gh * gw, patch_h * patch_w], out))
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, n_mels: usize, n_frames: usize, patch_h: usize, patch_w: usize, hop_ms: f64) -> Result<Spectrogram> {
    check_divisible(n_mels, n_frames, patch_h, patch_w)?;
    let gw = n_frames / patch_w;
    if patches.shape() != [(n_mels / patch_h) * gw, patch_h * patch_w] {
        return Err(Error::shape(format!("patch tensor {:?} does not tile {n_mels}x{n_frames}", patches.shape())));
    }
    let mut values = vec![0.0; n_mels * n_frames];
    for (p, patch) in patches.data().chunks(patch_h * patch_w).enumerate() {
        let (pi, pj) = (p / gw, p % gw);
        for i in 0..patch_h {
            let row = (pi * patch_h + i) * n_frames + pj * patch_w;
            values[row..row + patch_w].copy_from_slice(&patch[i * patch_w..(i + 1) * patch_w]);
        }
    }
    Spectrogram::new(values, n_mels, n_frames, hop_ms)
}

fn check_divisible(f: usize, t: usize, ph: usize, pw: usize) -> Result<()> {
    if ph == 0 || pw == 0 || f % ph != 0 || t % pw != 0 {
        return Err(Error::invalid(format!("{f}x{t} spectrogram does not divide into {ph}x{pw} patches")));
    }
    Ok(())
}

/// Interleaved sine/cosine encodings: `pe[p, 2i] = sin(p / 10000^(2i/dim))`, `pe[p, 2i+1] = cos(..)`.
pub fn sinusoidal_posenc(n_positions: usize, dim: usize) -> Result<Tensor> {
    if dim % 2 != 0 {
        return Err(Error::invalid(format!("positional encoding width must be even, got {dim}")));
    }
    let mut pe = vec![0.0; n_positions * dim];
    for p in 0..n_positions {
        for i in 0..dim / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            pe[p * dim + 2 * i] = angle.sin();
            pe[p * dim + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::from_vec(&[n_positions, dim], pe))
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
}

impl Block {
    fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut SeededRng) -> Self {
        let init = Init::TruncNormal(INIT_STD);
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            qkv: Linear::new(store, &format!("{name}.qkv"), d, 3 * d, true, init, rng),
            proj: Linear::new(store, &format!("{name}.proj"), d, d, true, init, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            fc1: Linear::new(store, &format!("{name}.fc1"), d, 4 * d, true, init, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), 4 * d, d, true, init, rng),
            heads,
        }
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let h = self.ln1.forward(g, x);
        let h = self.qkv.forward(g, h);
        let h = g.attention(h, self.heads);
        let h = self.proj.forward(g, h);
        let x = g.add(x, h);
        let h = self.ln2.forward(g, x);
        let h = self.fc1.forward(g, h);
        let h = g.gelu(h);
        let h = self.fc2.forward(g, h);
        g.add(x, h)
    }
}

#[derive(Debug, Clone)]
enum Tokenizer {
    Linear(Linear),
    Stem { convs: Vec<(Conv2d, BatchNorm)>, proj: Linear },
}

/// Transformer encoder returning the final CLS token.
#[derive(Debug, Clone)]
pub struct Vit {
    tokenizer: Tokenizer,
    cls: crate::nn::ParamId,
    blocks: Vec<Block>,
    norm: LayerNorm,
    posenc: Tensor,
    dim: usize,
    patch: (usize, usize),
    grid: (usize, usize),
}

impl Vit {
    pub fn new(cfg: &VitConfig, n_mels: usize, n_frames: usize, store: &mut ParamStore, rng: &mut SeededRng) -> Result<Self> {
        let (d, depth, heads) = cfg.resolved();
        check_divisible(n_mels, n_frames, cfg.patch_h, cfg.patch_w)?;
        if d == 0 || heads == 0 || d % heads != 0 {
            return Err(Error::invalid(format!("width {d} must split evenly into {heads} heads")));
        }
        let grid = (n_mels / cfg.patch_h, n_frames / cfg.patch_w);
        let tokenizer = match cfg.variant {
            VitVariant::Vit => Tokenizer::Linear(Linear::new(
                store,
                "encoder.patch_embed",
                cfg.patch_h * cfg.patch_w,
                d,
                true,
                Init::TruncNormal(INIT_STD),
                rng,
            )),
            VitVariant::VitC => {
                if d % 8 != 0 {
                    return Err(Error::invalid(format!("convolutional stem needs width divisible by 8, got {d}")));
                }
                let sh = stem_strides(cfg.patch_h)?;
                let sw = stem_strides(cfg.patch_w)?;
                let mut convs = Vec::new();
                let mut in_c = 1;
                for (i, (&a, &b)) in sh.iter().zip(&sw).enumerate() {
                    let out_c = d >> (3 - i);
                    let name = format!("encoder.stem{i}");
                    convs.push((Conv2d::new(store, &name, in_c, out_c, 3, (a, b), false, rng), BatchNorm::new(store, &name, out_c)));
                    in_c = out_c;
                }
                let proj = Linear::new(store, "encoder.stem_proj", d, d, true, Init::TruncNormal(INIT_STD), rng);
                Tokenizer::Stem { convs, proj }
            }
        };
        let cls = store.add("encoder.cls_token", trunc_normal(&[d], INIT_STD, rng), ParamKind::Weight);
        let blocks = (0..depth).map(|i| Block::new(store, &format!("encoder.blocks.{i}"), d, heads, rng)).collect();
        let norm = LayerNorm::new(store, "encoder.final", d);
        let posenc = sinusoidal_posenc(grid.0 * grid.1, d)?;
        Ok(Self { tokenizer, cls, blocks, norm, posenc, dim: d, patch: (cfg.patch_h, cfg.patch_w), grid })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Patch tokens `[B, N, d]` before positional encoding.
    fn tokens(&self, g: &mut Graph<'_>, x: &Tensor) -> Result<Var> {
        let (b, f, t) = (x.dim(0), x.dim(1), x.dim(2));
        let (ph, pw) = self.patch;
        if (f / ph, t / pw) != self.grid || f % ph != 0 || t % pw != 0 {
            return Err(Error::shape(format!("encoder built for a {:?} patch grid, got {f}x{t} input", self.grid)));
        }
        match &self.tokenizer {
            Tokenizer::Linear(embed) => {
                let n = self.n_patches();
                let mut data = Vec::with_capacity(x.numel());
                for bi in 0..b {
                    let sample = &x.data()[bi * f * t..(bi + 1) * f * t];
                    let spec = Spectrogram { values: sample.to_vec(), n_mels: f, n_frames: t, frame_hop_ms: 10.0 };
                    data.extend(patchify(&spec, ph, pw)?.into_data());
                }
                let p = g.input(Tensor::from_vec(&[b, n, ph * pw], data));
                Ok(embed.forward(g, p))
            }
            Tokenizer::Stem { convs, proj } => {
                let mut h = g.input(x.clone().reshape(&[b, 1, f, t]));
                for (conv, bn) in convs {
                    h = conv.forward(g, h);
                    h = bn.forward(g, h)?;
                    h = g.relu(h);
                }
                let s = g.shape(h);
                debug_assert_eq!((s[2], s[3]), self.grid);
                h = g.permute(h, &[0, 2, 3, 1]);
                h = g.reshape(h, &[b, s[2] * s[3], self.dim]);
                Ok(proj.forward(g, h))
            }
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: &Tensor, masks: Option<&[MaskPlan]>) -> Result<EncoderOutput> {
        let b = x.dim(0);
        let n = self.n_patches();
        let tokens = self.tokens(g, x)?;
        let mut h = g.add_const(tokens, &self.posenc);
        if let Some(masks) = masks {
            if masks.len() != b {
                return Err(Error::shape(format!("{} mask plans for a batch of {b}", masks.len())));
            }
            let kept = masks[0].kept_indices.len();
            if kept == 0 {
                return Err(Error::invalid("mask plan keeps no patches"));
            }
            if masks.iter().any(|m| m.n_patches() != n || m.kept_indices.len() != kept) {
                return Err(Error::invalid(format!("mask plans must cover {n} patches and keep the same count")));
            }
            h = g.gather_tokens(h, masks.iter().map(|m| m.kept_indices.clone()).collect());
        }
        let cls = g.param(self.cls);
        h = g.prepend_token(h, cls);
        let seq = g.shape(h)[1];
        for block in &self.blocks {
            h = block.forward(g, h);
        }
        h = self.norm.forward(g, h);
        Ok(EncoderOutput { rep: g.select_token(h, 0), attention_tokens: Some(seq) })
    }
}

/// Splits a power-of-two patch side into four per-layer strides, larger strides first.
fn stem_strides(patch: usize) -> Result<[usize; 4]> {
    if !patch.is_power_of_two() {
        return Err(Error::invalid(format!("convolutional stem needs power-of-two patch sides, got {patch}")));
    }
    let log = patch.trailing_zeros() as usize;
    let mut s = [1usize; 4];
    for (i, v) in s.iter_mut().enumerate() {
        *v = 1 << (log / 4 + usize::from(i < log % 4));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_strides_match_patch_sides() {
        assert_eq!(stem_strides(16).unwrap(), [2, 2, 2, 2]);
        assert_eq!(stem_strides(8).unwrap(), [2, 2, 2, 1]);
        assert_eq!(stem_strides(64).unwrap(), [4, 4, 2, 2]);
        assert_eq!(stem_strides(2).unwrap(), [2, 1, 1, 1]);
        assert!(stem_strides(12).is_err());
    }

    #[test]
    fn posenc_position_zero_alternates() {
        let pe = sinusoidal_posenc(4, 6).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(sinusoidal_posenc(4, 5).is_err());
    }
}
