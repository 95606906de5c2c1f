use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Manifest, ManifestEntry};
use crate::dsp::{write_wav, MelConfig, Waveform};
use crate::error::{Error, Result};
use crate::rng::{stream, SeededRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Steady sinusoid at f0.
    Tone,
    /// Linear sweep from f0 up to 1.5 f0.
    Chirp,
    /// Narrow-band noise around f0, switched on for part of the clip.
    NoiseBurst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthClass {
    pub name: String,
    pub kind: SynthKind,
    pub f0_lo_hz: f64,
    pub f0_hi_hz: f64,
    pub duration_s: f64,
    pub snr_db: f64,
}

impl SynthClass {
    fn highest_hz(&self) -> f64 {
        match self.kind {
            SynthKind::Tone => self.f0_hi_hz,
            SynthKind::Chirp => 1.5 * self.f0_hi_hz,
            SynthKind::NoiseBurst => 1.1 * self.f0_hi_hz,
        }
    }

    fn lowest_hz(&self) -> f64 {
        match self.kind {
            SynthKind::NoiseBurst => 0.9 * self.f0_lo_hz,
            _ => self.f0_lo_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub clips_per_class: usize,
    pub classes: Vec<SynthClass>,
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
}

fn default_rate() -> u32 {
    16_000
}

impl Default for SynthSpec {
    fn default() -> Self {
        let class = |name: &str, kind, lo, hi| SynthClass {
            name: name.into(),
            kind,
            f0_lo_hz: lo,
            f0_hi_hz: hi,
            duration_s: 1.5,
            snr_db: 20.0,
        };
        Self {
            clips_per_class: 20,
            classes: vec![
                class("tone", SynthKind::Tone, 250.0, 500.0),
                class("chirp", SynthKind::Chirp, 900.0, 1400.0),
                class("noise", SynthKind::NoiseBurst, 3000.0, 5000.0),
            ],
            seed: 1234,
            sample_rate: 16_000,
        }
    }
}

impl SynthSpec {
    pub fn n_clips(&self) -> usize {
        self.clips_per_class * self.classes.len()
    }

    pub fn validate(&self, mel: &MelConfig) -> Result<()> {
        if self.n_clips() == 0 {
            return Err(Error::Config("synth: need at least one class and one clip".into()));
        }
        for c in &self.classes {
            if !(c.f0_lo_hz > 0.0 && c.f0_lo_hz <= c.f0_hi_hz) {
                return Err(Error::Config(format!("synth class `{}`: bad f0 range", c.name)));
            }
            if c.lowest_hz() < mel.fmin_hz || c.highest_hz() > mel.fmax_hz {
                return Err(Error::Config(format!(
                    "synth class `{}` spans {:.0}-{:.0} Hz, outside the mel range",
                    c.name,
                    c.lowest_hz(),
                    c.highest_hz()
                )));
            }
            if !(c.duration_s > 0.0) {
                return Err(Error::Config(format!("synth class `{}`: duration must be positive", c.name)));
            }
            if c.name.is_empty() || c.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("synth class name `{}` is not a plain identifier", c.name)));
            }
        }
        Ok(())
    }
}

fn envelope(i: usize, n: usize, fade: usize) -> f64 {
    let fade = fade.max(1);
    let a = (i as f64 / fade as f64).min(1.0);
    let b = ((n - 1 - i) as f64 / fade as f64).min(1.0);
    a.min(b)
}

fn render(class: &SynthClass, sr: u32, rng: &mut SeededRng) -> Vec<f64> {
    let n = (class.duration_s * sr as f64).round() as usize;
    let srf = sr as f64;
    let f0 = if class.f0_hi_hz > class.f0_lo_hz {
        rng.random_range(class.f0_lo_hz..class.f0_hi_hz)
    } else {
        class.f0_lo_hz
    };
    let amp = rng.random_range(0.3..0.8);
    let phase = rng.random_range(0.0..2.0 * PI);
    let fade = (0.01 * srf) as usize;
    match class.kind {
        SynthKind::Tone => (0..n)
            .map(|i| amp * envelope(i, n, fade) * (2.0 * PI * f0 * i as f64 / srf + phase).sin())
            .collect(),
        SynthKind::Chirp => {
            let dur = n as f64 / srf;
            let rate = 0.5 * f0 / dur;
            (0..n)
                .map(|i| {
                    let t = i as f64 / srf;
                    amp * envelope(i, n, fade) * (2.0 * PI * (f0 * t + 0.5 * rate * t * t) + phase).sin()
                })
                .collect()
        }
        SynthKind::NoiseBurst => {
            let partials: Vec<(f64, f64)> = (0..24)
                .map(|_| (rng.random_range(0.9 * f0..1.1 * f0), rng.random_range(0.0..2.0 * PI)))
                .collect();
            let on = rng.random_range(n / 2..=n);
            let start = rng.random_range(0..=n - on);
            let norm = amp / (partials.len() as f64).sqrt();
            (0..n)
                .map(|i| {
                    if i < start || i >= start + on {
                        return 0.0;
                    }
                    let t = i as f64 / srf;
                    let s: f64 = partials.iter().map(|&(f, p)| (2.0 * PI * f * t + p).sin()).sum();
                    norm * envelope(i - start, on, fade) * s
                })
                .collect()
        }
    }
}

/// Renders clip `index` of class `class_idx`. Deterministic in `(seed, class_idx, index)`.
pub fn synth_waveform(spec: &SynthSpec, class_idx: usize, index: usize) -> Result<Waveform> {
    let class = &spec.classes[class_idx];
    let mut rng = stream(spec.seed, Stream::Synth, &[class_idx as u64, index as u64]);
    let mut x = render(class, spec.sample_rate, &mut rng);
    let power = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    let noise_std = (power / 10f64.powf(class.snr_db / 10.0)).sqrt();
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("finite std");
        for v in x.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.99 {
        let g = 0.99 / peak;
        x.iter_mut().for_each(|v| *v *= g);
    }
    Waveform::new(x, spec.sample_rate)
}

/// Writes the synthetic dataset under `out_dir` and returns its manifest and labels.
///
/// Files land at `<out_dir>/<class>/<class>_<index>.wav`, and the manifest at
/// `<out_dir>/manifest.jsonl` with paths relative to `out_dir`.
pub fn synth_dataset(spec: &SynthSpec, mel: &MelConfig, out_dir: &Path) -> Result<(Manifest, Vec<String>)> {
    spec.validate(mel)?;
    let mut entries = Vec::with_capacity(spec.n_clips());
    let mut labels = Vec::with_capacity(spec.n_clips());
    for (ci, class) in spec.classes.iter().enumerate() {
        fs::create_dir_all(out_dir.join(&class.name))?;
        for i in 0..spec.clips_per_class {
            let w = synth_waveform(spec, ci, i)?;
            let rel = PathBuf::from(&class.name).join(format!("{}_{:04}.wav", class.name, i));
            write_wav(&out_dir.join(&rel), &w)?;
            entries.push(ManifestEntry {
                clip_id: format!("{}_{:04}", class.name, i),
                path: rel,
                duration_s: w.duration_s(),
                label: Some(class.name.clone()),
            });
            labels.push(class.name.clone());
        }
    }
    let manifest = Manifest::new(entries)?;
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    // Return absolute paths so callers can load clips directly.
    let resolved = Manifest::new(
        manifest
            .entries
            .into_iter()
            .map(|mut e| {
                e.path = out_dir.join(&e.path);
                e
            })
            .collect(),
    )?;
    Ok((resolved, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{logmel, mel_center_frequencies};

    fn small_spec() -> SynthSpec {
        SynthSpec { clips_per_class: 3, ..SynthSpec::default() }
    }

    #[test]
    fn counts_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { clips_per_class: 20, ..SynthSpec::default() };
        let (m, labels) = synth_dataset(&spec, &MelConfig::default(), dir.path()).unwrap();
        assert_eq!(m.len(), 60);
        assert_eq!(labels.len(), 60);
        assert!(m.entries.iter().all(|e| e.label.is_some()));
        assert_eq!(Manifest::load(&dir.path().join("manifest.jsonl")).unwrap().len(), 60);
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let (ma, _) = synth_dataset(&spec, &MelConfig::default(), a.path()).unwrap();
        let (mb, _) = synth_dataset(&spec, &MelConfig::default(), b.path()).unwrap();
        for (ea, eb) in ma.entries.iter().zip(&mb.entries) {
            assert_eq!(fs::read(&ea.path).unwrap(), fs::read(&eb.path).unwrap());
        }
    }

    #[test]
    fn tone_440_peaks_at_the_nearest_mel_bin() {
        let mel = MelConfig::default();
        let spec = SynthSpec {
            clips_per_class: 1,
            classes: vec![SynthClass {
                name: "tone440".into(),
                kind: SynthKind::Tone,
                f0_lo_hz: 440.0,
                f0_hi_hz: 440.0,
                duration_s: 1.0,
                snr_db: 30.0,
            }],
            seed: 5,
            sample_rate: 16_000,
        };
        let w = synth_waveform(&spec, 0, 0).unwrap();
        let s = logmel(&w, &mel).unwrap();
        let centers = mel_center_frequencies(&mel);
        let nearest = (0..centers.len())
            .min_by(|&a, &b| (centers[a] - 440.0).abs().total_cmp(&(centers[b] - 440.0).abs()))
            .unwrap();
        for t in 5..s.n_frames - 5 {
            assert_eq!(s.argmax_bin(t), nearest, "frame {t}");
        }
    }

    #[test]
    fn out_of_band_class_rejected() {
        let mut spec = small_spec();
        spec.classes[0].f0_hi_hz = 7_700.0;
        spec.classes[0].kind = SynthKind::Chirp;
        assert!(spec.validate(&MelConfig::default()).is_err());
    }
}
