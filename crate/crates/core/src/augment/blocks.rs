use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{uniform, AugmentConfig};
use crate::dsp::Spectrogram;
use crate::rng::SeededRng;

/// A crop on the virtual canvas. The input occupies canvas columns
/// `input_offset..input_offset + T`; everything else is fill.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub input_offset: usize,
}

/// Samples crop size and offsets for an `F x T` input.
///
/// Height is `clamp(round(u_f F), 1, F)`; width is `clamp(round(u_t T), 1,
/// canvas)` on a canvas `round(T * max(1, hi_t))` frames wide with the input
/// centered in it.
pub fn sample_crop(n_mels: usize, n_frames: usize, cfg: &AugmentConfig, rng: &mut SeededRng) -> CropBox {
    let canvas_w = ((n_frames as f64) * cfg.rrc_time_scale.1.max(1.0)).round() as usize;
    let input_offset = (canvas_w - n_frames) / 2;
    let u_f = uniform(rng, cfg.rrc_freq_scale.0, cfg.rrc_freq_scale.1);
    let u_t = uniform(rng, cfg.rrc_time_scale.0, cfg.rrc_time_scale.1);
    let height = ((u_f * n_mels as f64).round() as usize).clamp(1, n_mels);
    let width = ((u_t * n_frames as f64).round() as usize).clamp(1, canvas_w);
    let top = rng.random_range(0..=n_mels - height);
    let left = rng.random_range(0..=canvas_w - width);
    CropBox { top, left, height, width, input_offset }
}

/// Bilinear resize of the crop back to the input shape (half-pixel centers).
pub fn apply_crop(s: &Spectrogram, b: &CropBox, fill: f64) -> Spectrogram {
    let (f_out, t_out) = s.shape();
    let canvas = |r: usize, c: usize| -> f64 {
        let r = b.top + r;
        let c = b.left + c;
        if c < b.input_offset || c >= b.input_offset + s.n_frames {
            fill
        } else {
            s.get(r, c - b.input_offset)
        }
    };
    let axis = |dst: usize, n_src: usize, n_dst: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n_src - 1);
        (i0, i1, pos - i0 as f64)
    };
    let cols: Vec<_> = (0..t_out).map(|j| axis(j, b.width, t_out)).collect();
    let mut out = Spectrogram::filled(f_out, t_out, s.frame_hop_ms, fill);
    for i in 0..f_out {
        let (r0, r1, wy) = axis(i, b.height, f_out);
        for (j, &(c0, c1, wx)) in cols.iter().enumerate() {
            let top = canvas(r0, c0) * (1.0 - wx) + canvas(r0, c1) * wx;
            let bottom = canvas(r1, c0) * (1.0 - wx) + canvas(r1, c1) * wx;
            out.set(i, j, top * (1.0 - wy) + bottom * wy);
        }
    }
    out
}

/// Random resize crop, approximating pitch shift and time stretch.
pub fn rrc(s: &Spectrogram, cfg: &AugmentConfig, rng: &mut SeededRng) -> Spectrogram {
    let b = sample_crop(s.n_mels, s.n_frames, cfg, rng);
    apply_crop(s, &b, 0.0)
}

/// Adds the log-domain ramp `gain * t / (T - 1)` to frame `t`.
pub fn apply_fader(s: &Spectrogram, gain: f64) -> Spectrogram {
    let mut out = s.clone();
    if gain == 0.0 || s.n_frames < 2 {
        return out;
    }
    let denom = (s.n_frames - 1) as f64;
    for row in out.values.chunks_mut(s.n_frames) {
        for (t, v) in row.iter_mut().enumerate() {
            *v += gain * t as f64 / denom;
        }
    }
    out
}

/// Random linear fader with gain drawn from `rlf_gain_range`.
pub fn rlf(s: &Spectrogram, cfg: &AugmentConfig, rng: &mut SeededRng) -> Spectrogram {
    let gain = uniform(rng, cfg.rlf_gain_range.0, cfg.rlf_gain_range.1);
    apply_fader(s, gain)
}

/// Adds i.i.d. Gaussian noise of the given variance to every cell.
pub fn add_gaussian_noise(s: &Spectrogram, variance: f64, rng: &mut SeededRng) -> Spectrogram {
    let mut out = s.clone();
    if variance <= 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite std");
    out.values.iter_mut().for_each(|v| *v += normal.sample(rng));
    out
}

/// Gaussian noise `N(0, lambda)` with the variance `lambda ~ U(0, noise_alpha)`.
pub fn add_noise(s: &Spectrogram, cfg: &AugmentConfig, rng: &mut SeededRng) -> Spectrogram {
    let variance = uniform(rng, 0.0, cfg.noise_alpha);
    add_gaussian_noise(s, variance, rng)
}
