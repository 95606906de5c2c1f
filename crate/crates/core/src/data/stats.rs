use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Manifest;
use crate::dsp::{load_audio, logmel, MelConfig, Spectrogram};
use crate::error::{Error, Result};
use crate::provenance::config_hash;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Streaming first and second moments with an associative merge.
#[derive(Debug, Clone, Copy, Default)]
pub struct MomentAccumulator {
    n: u64,
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
}

impl MomentAccumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum.add(x);
        self.sum_sq.add(x * x);
    }

    pub fn extend(&mut self, xs: &[f64]) {
        for &x in xs {
            self.push(x);
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        self.n += other.n;
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.sum.value() / self.n as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq.value() / self.n as f64 - m * m).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerBinStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Global log-mel mean and standard deviation of a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean: f64,
    pub std: f64,
    pub n_cells: u64,
    pub mel_config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_bin: Option<PerBinStats>,
}

impl DatasetStats {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0, n_cells: 0, mel_config_hash: String::new(), per_bin: None }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let stats: DatasetStats = serde_json::from_slice(&std::fs::read(path)?)?;
        if !(stats.std > 0.0) {
            return Err(Error::DegenerateStats);
        }
        Ok(stats)
    }
}

/// Exact moments over every cell of the given spectrograms.
pub fn stats_from_spectrograms<'a, I>(specs: I, cfg: &MelConfig, per_bin: bool) -> Result<DatasetStats>
where
    I: IntoIterator<Item = &'a Spectrogram>,
{
    let mut global = MomentAccumulator::default();
    let mut bins: Vec<MomentAccumulator> = Vec::new();
    for s in specs {
        global.extend(&s.values);
        if per_bin {
            if bins.is_empty() {
                bins = vec![MomentAccumulator::default(); s.n_mels];
            } else if bins.len() != s.n_mels {
                return Err(Error::shape("spectrograms disagree on n_mels"));
            }
            for (acc, row) in bins.iter_mut().zip(s.values.chunks(s.n_frames)) {
                acc.extend(row);
            }
        }
    }
    if global.count() == 0 {
        return Err(Error::invalid("no spectrogram cells to compute statistics over"));
    }
    let std = global.std();
    if !(std > 0.0) {
        return Err(Error::DegenerateStats);
    }
    let per_bin = per_bin.then(|| PerBinStats {
        mean: bins.iter().map(MomentAccumulator::mean).collect(),
        std: bins.iter().map(|b| b.std().max(f64::MIN_POSITIVE)).collect(),
    });
    Ok(DatasetStats {
        mean: global.mean(),
        std,
        n_cells: global.count(),
        mel_config_hash: config_hash(cfg),
        per_bin,
    })
}

/// Loads every clip of the manifest and computes log-mel statistics.
pub fn dataset_stats(m: &Manifest, cfg: &MelConfig, per_bin: bool) -> Result<DatasetStats> {
    if m.is_empty() {
        return Err(Error::invalid("empty manifest"));
    }
    let mut specs = Vec::with_capacity(m.len());
    for e in &m.entries {
        let w = load_audio(&e.path, cfg.sample_rate_hz)?;
        specs.push(logmel(&w, cfg)?);
    }
    stats_from_spectrograms(&specs, cfg, per_bin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(v: f64, t: usize) -> Spectrogram {
        Spectrogram::filled(4, t, 10.0, v)
    }

    /// Two-pass brute force over a flat list.
    fn brute(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn two_constant_clips() {
        let (a, b) = (-3.0, 5.0);
        let specs = [constant(a, 10), constant(b, 10)];
        let s = stats_from_spectrograms(&specs, &MelConfig::default(), false).unwrap();
        assert!((s.mean - (a + b) / 2.0).abs() < 1e-12);
        assert!((s.std - (a - b).abs() / 2.0).abs() < 1e-12);
        let all: Vec<f64> = specs.iter().flat_map(|s| s.values.clone()).collect();
        let (bm, bs) = brute(&all);
        assert!((s.mean - bm).abs() < 1e-12 && (s.std - bs).abs() < 1e-12);
        assert_eq!(s.n_cells, 80);
    }

    #[test]
    fn identical_silent_clips_are_degenerate() {
        let specs = [constant(-18.42, 5), constant(-18.42, 5)];
        assert!(matches!(
            stats_from_spectrograms(&specs, &MelConfig::default(), false),
            Err(Error::DegenerateStats)
        ));
    }

    #[test]
    fn per_bin_statistics() {
        let s = Spectrogram::new(vec![0.0, 2.0, 1.0, 1.0], 2, 2, 10.0).unwrap();
        let st = stats_from_spectrograms([&s], &MelConfig::default(), true).unwrap();
        let pb = st.per_bin.unwrap();
        assert_eq!(pb.mean, vec![1.0, 1.0]);
        assert_eq!(pb.std[0], 1.0);
    }

    proptest! {
        #[test]
        fn permutation_and_chunking_invariance(
            values in prop::collection::vec(-20.0f64..5.0, 8..200),
            split in 1usize..7,
        ) {
            let mut fwd = MomentAccumulator::default();
            fwd.extend(&values);
            let mut rev = MomentAccumulator::default();
            for &v in values.iter().rev() { rev.push(v); }
            let chunk = values.len().div_ceil(split);
            let mut merged = MomentAccumulator::default();
            for c in values.chunks(chunk).rev() {
                let mut part = MomentAccumulator::default();
                part.extend(c);
                merged.merge(&part);
            }
            let (bm, bs) = brute(&values);
            for acc in [&fwd, &rev, &merged] {
                prop_assert!((acc.mean() - fwd.mean()).abs() <= 1e-9);
                prop_assert!((acc.std() - fwd.std()).abs() <= 1e-9);
            }
            prop_assert!((fwd.mean() - bm).abs() <= 1e-9);
            prop_assert!((fwd.std() - bs).abs() <= 1e-6);
        }
    }
}
