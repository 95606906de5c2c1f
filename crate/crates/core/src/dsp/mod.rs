//! Audio front end: WAV ingest, resampling and log-mel spectrograms.

mod crop;
mod mel;
mod resample;
mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use crop::{crop_or_pad, frames_to_span_ms};
pub use mel::{hz_to_mel, logmel, mel_center_frequencies, mel_filterbank, mel_to_hz, n_frames_for};
pub use resample::resample;
pub use wav::{load_audio, read_wav, write_wav};

/// Mono audio with a sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("waveform contains non-finite samples"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Log-mel magnitudes stored mel-bin major: `values[bin * n_frames + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub frame_hop_ms: f64,
}

impl Spectrogram {
    pub fn new(values: Vec<f64>, n_mels: usize, n_frames: usize, frame_hop_ms: f64) -> Result<Self> {
        if n_mels == 0 || n_frames == 0 {
            return Err(Error::shape("spectrogram must have F > 0 and T > 0"));
        }
        if values.len() != n_mels * n_frames {
            return Err(Error::shape(format!(
                "{} values for a {}x{} spectrogram",
                values.len(),
                n_mels,
                n_frames
            )));
        }
        Ok(Self { values, n_mels, n_frames, frame_hop_ms })
    }

    pub fn filled(n_mels: usize, n_frames: usize, frame_hop_ms: f64, value: f64) -> Self {
        Self { values: vec![value; n_mels * n_frames], n_mels, n_frames, frame_hop_ms }
    }

    #[inline]
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.n_frames + frame]
    }

    #[inline]
    pub fn set(&mut self, bin: usize, frame: usize, v: f64) {
        self.values[bin * self.n_frames + frame] = v;
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_mels, self.n_frames)
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.shape() == other.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Frames `start..start + len`, padding past the end with `pad_value`.
    pub fn frames(&self, start: usize, len: usize, pad_value: f64) -> Spectrogram {
        let mut out = Spectrogram::filled(self.n_mels, len, self.frame_hop_ms, pad_value);
        let avail = self.n_frames.saturating_sub(start).min(len);
        for f in 0..self.n_mels {
            let src = &self.values[f * self.n_frames + start..f * self.n_frames + start + avail];
            out.values[f * len..f * len + avail].copy_from_slice(src);
        }
        out
    }

    /// Index of the loudest mel bin in `frame`.
    pub fn argmax_bin(&self, frame: usize) -> usize {
        (0..self.n_mels)
            .max_by(|&a, &b| self.get(a, frame).total_cmp(&self.get(b, frame)))
            .unwrap_or(0)
    }

    /// Per-bin average over frames.
    pub fn time_average(&self) -> Vec<f64> {
        self.values
            .chunks(self.n_frames)
            .map(|row| row.iter().sum::<f64>() / self.n_frames as f64)
            .collect()
    }
}

/// Log-mel front-end settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            window_ms: 64.0,
            hop_ms: 10.0,
            n_mels: 64,
            fmin_hz: 60.0,
            fmax_hz: 7_800.0,
            log_floor: 1e-8,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 || self.n_mels == 0 {
            return Err(Error::Config("mel: sample rate and n_mels must be positive".into()));
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz) {
            return Err(Error::Config("mel: need 0 <= fmin < fmax".into()));
        }
        if self.fmax_hz > self.sample_rate_hz as f64 / 2.0 {
            return Err(Error::Config("mel: fmax above Nyquist".into()));
        }
        if !(self.hop_ms > 0.0 && self.window_ms >= self.hop_ms) {
            return Err(Error::Config("mel: need window_ms >= hop_ms > 0".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("mel: log_floor must be positive".into()));
        }
        if self.hop_samples() == 0 {
            return Err(Error::Config("mel: hop shorter than one sample".into()));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    /// Log-domain value of digital silence, `ln(log_floor)`.
    pub fn silence_value(&self) -> f64 {
        self.log_floor.ln()
    }
}
