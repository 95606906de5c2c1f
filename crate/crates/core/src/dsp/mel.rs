use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{MelConfig, Spectrogram, Waveform};
use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn mel_points(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin_hz);
    let hi = hz_to_mel(cfg.fmax_hz);
    let n = cfg.n_mels + 2;
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Center frequency (Hz) of each triangular mel filter.
pub fn mel_center_frequencies(cfg: &MelConfig) -> Vec<f64> {
    let pts = mel_points(cfg);
    pts[1..=cfg.n_mels].to_vec()
}

/// Triangular filters over the `n_fft / 2 + 1` power bins, unit peak, row per mel bin.
pub fn mel_filterbank(cfg: &MelConfig, n_fft: usize) -> Vec<Vec<f64>> {
    let pts = mel_points(cfg);
    let n_bins = n_fft / 2 + 1;
    let bin_hz = cfg.sample_rate_hz as f64 / n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, center, hi) = (pts[m], pts[m + 1], pts[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - lo) / (center - lo);
                    let down = (hi - f) / (hi - center);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Frames that fit entirely inside a signal of `len` samples (no center padding).
pub fn n_frames_for(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / hop + 1
    }
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Log-mel spectrogram, `ln(mel_power + log_floor)`.
///
/// Frames are taken fully inside the signal: frame `t` covers samples
/// `[t * hop, t * hop + window)`, so a clip of `len` samples yields
/// `floor((len - window) / hop) + 1` frames. With the default 64 ms window and
/// 10 ms hop at 16 kHz, one second of audio (16000 samples) gives 94 frames.
/// The STFT uses a periodic Hann window, an FFT the size of the window, and
/// the squared magnitude fed through HTK-scale triangular filters.
pub fn logmel(w: &Waveform, cfg: &MelConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if w.sample_rate != cfg.sample_rate_hz {
        return Err(Error::invalid(format!(
            "waveform at {} Hz, mel config expects {} Hz",
            w.sample_rate, cfg.sample_rate_hz
        )));
    }
    if w.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let window = cfg.window_samples();
    let hop = cfg.hop_samples();
    let n_frames = n_frames_for(w.len(), window, hop);
    if n_frames == 0 {
        return Err(Error::ClipTooShort { samples: w.len(), window });
    }

    let n_fft = window;
    let fb = mel_filterbank(cfg, n_fft);
    // Restrict each filter to its nonzero support.
    let support: Vec<(usize, usize)> = fb
        .iter()
        .map(|row| {
            let first = row.iter().position(|&v| v > 0.0).unwrap_or(0);
            let last = row.iter().rposition(|&v| v > 0.0).map_or(0, |i| i + 1);
            (first, last.max(first))
        })
        .collect();
    let hann = periodic_hann(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_fft / 2 + 1];
    let mut values = vec![0.0; cfg.n_mels * n_frames];

    for t in 0..n_frames {
        let frame = &w.samples[t * hop..t * hop + window];
        for ((b, &x), &h) in buf.iter_mut().zip(frame).zip(&hann) {
            *b = Complex::new(x * h, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for (m, (row, &(a, b))) in fb.iter().zip(&support).enumerate() {
            let mel: f64 = row[a..b].iter().zip(&power[a..b]).map(|(w, p)| w * p).sum();
            values[m * n_frames + t] = (mel + cfg.log_floor).ln();
        }
    }
    Spectrogram::new(values, cfg.n_mels, n_frames, cfg.hop_ms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64, sr: u32) -> Waveform {
        let n = (secs * sr as f64) as usize;
        let s = (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect();
        Waveform::new(s, sr).unwrap()
    }

    #[test]
    fn one_second_gives_94_frames() {
        let cfg = MelConfig::default();
        let s = logmel(&sine(440.0, 1.0, 16_000), &cfg).unwrap();
        assert_eq!(s.shape(), (64, 94));
        assert_eq!(n_frames_for(16_000, 1024, 160), 94);
    }

    #[test]
    fn silence_is_log_floor() {
        let cfg = MelConfig::default();
        let w = Waveform::new(vec![0.0; 16_000], 16_000).unwrap();
        let s = logmel(&w, &cfg).unwrap();
        assert!(s.values.iter().all(|&v| v == cfg.log_floor.ln()));
    }

    #[test]
    fn too_short_and_empty_are_rejected() {
        let cfg = MelConfig::default();
        let w = Waveform::new(vec![0.0; 1000], 16_000).unwrap();
        assert!(matches!(logmel(&w, &cfg), Err(Error::ClipTooShort { .. })));
        let w = Waveform::new(vec![], 16_000).unwrap();
        assert!(matches!(logmel(&w, &cfg), Err(Error::EmptyWaveform)));
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let cfg = MelConfig::default();
        assert!(logmel(&sine(440.0, 1.0, 8_000), &cfg).is_err());
    }

    #[test]
    fn filterbank_rows_peak_at_most_one() {
        let cfg = MelConfig::default();
        let fb = mel_filterbank(&cfg, 1024);
        assert_eq!(fb.len(), 64);
        for row in &fb {
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(row.iter().any(|&v| v > 0.0));
        }
    }

    #[test]
    fn mel_roundtrip() {
        for hz in [0.0, 60.0, 440.0, 7800.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }
}
