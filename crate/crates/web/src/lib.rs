//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each operation has a plain Rust form returning [`abt_core::Result`] and a
//! thin `#[wasm_bindgen]` wrapper that converts errors for JavaScript.

use abt_core::augment::{make_views, mask_patches, pre_post_norm, AugmentConfig, MixupQueue, NormMode, NormStage};
use abt_core::data::{synth_waveform, SynthSpec};
use abt_core::dsp::{logmel, MelConfig, Spectrogram};
use abt_core::objective::{bt_loss, cross_correlation, batch_normalize, LossConfig};
use abt_core::rng::{stream, Stream};
use abt_core::tensor::Tensor;
use rand_distr::{Distribution, StandardNormal};
use wasm_bindgen::prelude::*;

pub const DEMO_FRAMES: usize = 96;
pub const PATCH: (usize, usize) = (16, 8);

/// Log-mel crop of a synthetic clip plus two augmented views, all `n_mels x n_frames`.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Views {
    n_mels: usize,
    n_frames: usize,
    original: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
}

#[wasm_bindgen]
impl Views {
    #[wasm_bindgen(getter)]
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    #[wasm_bindgen(getter)]
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    #[wasm_bindgen(getter)]
    pub fn original(&self) -> Vec<f64> {
        self.original.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn first(&self) -> Vec<f64> {
        self.first.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn second(&self) -> Vec<f64> {
        self.second.clone()
    }
}

fn clip(spec: &SynthSpec, mel: &MelConfig, class: usize, index: usize) -> abt_core::Result<Spectrogram> {
    let s = logmel(&synth_waveform(spec, class, index)?, mel)?;
    Ok(s.frames(0, DEMO_FRAMES, mel.silence_value()))
}

/// Class names of the built-in synthetic dataset.
#[wasm_bindgen]
pub fn class_names() -> Vec<String> {
    SynthSpec::default().classes.into_iter().map(|c| c.name).collect()
}

/// Two views of clip `index` of `class`; the Mixup queue holds clips of the other classes.
pub fn views(class: usize, index: usize, seed: u64) -> abt_core::Result<Views> {
    let spec = SynthSpec::default();
    if class >= spec.classes.len() {
        return Err(abt_core::Error::InvalidArgument(format!("class {class} out of range")));
    }
    let mel = MelConfig::default();
    let cfg = AugmentConfig { norm_mode: NormMode::PrePost, ..AugmentConfig::default() };
    let others = (0..spec.classes.len())
        .filter(|&c| c != class)
        .map(|c| Ok(pre_post_norm(&[clip(&spec, &mel, c, index)?], NormStage::Pre)?.remove(0)))
        .collect::<abt_core::Result<Vec<_>>>()?;
    let mut queue = MixupQueue::from_items(cfg.mixup_queue_len, others)?;
    let original = clip(&spec, &mel, class, index)?;
    let pair = make_views(&original, &cfg, None, &mut queue, seed, index as u64)?;
    Ok(Views {
        n_mels: original.n_mels,
        n_frames: original.n_frames,
        original: pre_post_norm(&[original], NormStage::Pre)?.remove(0).values,
        first: pair.first.values,
        second: pair.second.values,
    })
}

#[wasm_bindgen]
pub fn augmented_views(class: usize, index: usize, seed: u32) -> Result<Views, JsError> {
    views(class, index, seed as u64).map_err(|e| JsError::new(&e.to_string()))
}

fn patch_grid() -> (usize, usize) {
    (MelConfig::default().n_mels / PATCH.0, DEMO_FRAMES / PATCH.1)
}

/// Patch grid of the demo input as `[rows, cols]`, frequency-major.
#[wasm_bindgen]
pub fn mask_grid_shape() -> Vec<usize> {
    let (r, c) = patch_grid();
    vec![r, c]
}

/// One flag per patch in grid order; 1 marks a masked patch.
pub fn mask_flags(ratio: f64, seed: u64) -> abt_core::Result<Vec<u8>> {
    let (r, c) = patch_grid();
    let plan = mask_patches(r * c, ratio, &mut stream(seed, Stream::Demo, &[1]))?;
    let mut flags = vec![0u8; r * c];
    plan.masked_indices.iter().for_each(|&i| flags[i] = 1);
    Ok(flags)
}

#[wasm_bindgen]
pub fn masking_grid(ratio: f64, seed: u32) -> Result<Vec<u8>, JsError> {
    mask_flags(ratio, seed as u64).map_err(|e| JsError::new(&e.to_string()))
}

/// Loss terms and the cross-correlation matrix of a synthetic embedding pair.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct LossView {
    dim: usize,
    loss: f64,
    invariance: f64,
    redundancy: f64,
    correlation: Vec<f64>,
}

#[wasm_bindgen]
impl LossView {
    #[wasm_bindgen(getter)]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[wasm_bindgen(getter)]
    pub fn loss(&self) -> f64 {
        self.loss
    }

    #[wasm_bindgen(getter)]
    pub fn invariance(&self) -> f64 {
        self.invariance
    }

    #[wasm_bindgen(getter)]
    pub fn redundancy(&self) -> f64 {
        self.redundancy
    }

    /// Row-major `dim x dim` cross-correlation matrix.
    #[wasm_bindgen(getter)]
    pub fn correlation(&self) -> Vec<f64> {
        self.correlation.clone()
    }
}

/// Embeddings `Z = (1 - s) E + s c 1ᵀ` with a shared component `c` of weight `s = shared`,
/// and `Z' = Z + noise * E'`. Shared weight raises redundancy; noise breaks invariance.
pub fn explore(batch: usize, dim: usize, noise: f64, shared: f64, lambda: f64, seed: u64) -> abt_core::Result<LossView> {
    if !(0.0..=1.0).contains(&shared) || noise < 0.0 || dim == 0 {
        return Err(abt_core::Error::InvalidArgument("need dim >= 1, noise >= 0 and shared in [0, 1]".into()));
    }
    let mut rng = stream(seed, Stream::Demo, &[2]);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let common: Vec<f64> = (0..batch).map(|_| normal()).collect();
    let mut z = Vec::with_capacity(batch * dim);
    for c in &common {
        for _ in 0..dim {
            z.push((1.0 - shared) * normal() + shared * c);
        }
    }
    let zp: Vec<f64> = z.iter().map(|v| v + noise * normal()).collect();
    let cfg = LossConfig { lambda, ..LossConfig::default() };
    cfg.validate()?;
    let a = batch_normalize(&Tensor::from_vec(&[batch, dim], z), cfg.std_floor)?;
    let b = batch_normalize(&Tensor::from_vec(&[batch, dim], zp), cfg.std_floor)?;
    let c = cross_correlation(&a, &b)?;
    let terms = bt_loss(&c, &cfg)?;
    Ok(LossView { dim, loss: terms.loss, invariance: terms.invariance, redundancy: terms.redundancy, correlation: c.into_data() })
}

#[wasm_bindgen]
pub fn loss_explorer(batch: usize, dim: usize, noise: f64, shared: f64, lambda: f64, seed: u32) -> Result<LossView, JsError> {
    explore(batch, dim, noise, shared, lambda, seed as u64).map_err(|e| JsError::new(&e.to_string()))
}
