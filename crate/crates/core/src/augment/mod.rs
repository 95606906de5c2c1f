//! View generation: normalization, Mixup, random resize crop, random linear
//! fader, Gaussian noise and patch masking.

mod blocks;
mod mask;
mod mixup;
mod norm;
mod views;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use blocks::{add_noise, apply_crop, apply_fader, add_gaussian_noise, rlf, rrc, sample_crop, CropBox};
pub use mask::{mask_patches, masking_ratio_at, MaskPlan};
pub use mixup::{mix_log_exp, mixup, MixupQueue};
pub use norm::{normalize, pre_post_norm, NormStage};
pub use views::{make_view_batch, make_views, ViewPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Standardize with dataset statistics before augmenting.
    Dataset,
    /// Standardize with batch statistics before and after augmenting.
    PrePost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub use_mixup: bool,
    pub mixup_alpha: f64,
    pub mixup_queue_len: usize,
    pub use_rrc: bool,
    pub rrc_freq_scale: (f64, f64),
    pub rrc_time_scale: (f64, f64),
    pub use_rlf: bool,
    pub rlf_gain_range: (f64, f64),
    pub use_noise: bool,
    pub noise_alpha: f64,
    pub norm_mode: NormMode,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            use_mixup: true,
            mixup_alpha: 0.4,
            mixup_queue_len: 2048,
            use_rrc: true,
            rrc_freq_scale: (0.6, 1.5),
            rrc_time_scale: (0.6, 1.5),
            use_rlf: true,
            rlf_gain_range: (-1.0, 1.0),
            use_noise: false,
            noise_alpha: 0.2,
            norm_mode: NormMode::Dataset,
        }
    }
}

impl AugmentConfig {
    /// Every block switched off.
    pub fn disabled() -> Self {
        Self { use_mixup: false, use_rrc: false, use_rlf: false, use_noise: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.mixup_alpha) {
            return Err(Error::Config("augment: mixup_alpha must lie in [0, 0.5]".into()));
        }
        if self.mixup_queue_len == 0 {
            return Err(Error::Config("augment: mixup_queue_len must be positive".into()));
        }
        for (name, (lo, hi)) in [("rrc_freq_scale", self.rrc_freq_scale), ("rrc_time_scale", self.rrc_time_scale)] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::Config(format!("augment: {name} needs 0 < lo <= hi")));
            }
        }
        let (lo, hi) = self.rlf_gain_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config("augment: rlf_gain_range needs lo <= hi".into()));
        }
        if !(self.noise_alpha >= 0.0) {
            return Err(Error::Config("augment: noise_alpha must be >= 0".into()));
        }
        Ok(())
    }
}

/// Uniform draw on `[lo, hi]` that tolerates `lo == hi`.
pub(crate) fn uniform(rng: &mut crate::rng::SeededRng, lo: f64, hi: f64) -> f64 {
    use rand::Rng;
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}
