use serde::{Deserialize, Serialize};

use crate::augment::{normalize, pre_post_norm, NormMode, NormStage};
use crate::data::DatasetStats;
use crate::dsp::Spectrogram;
use crate::encoder::stack_batch;
use crate::error::{Error, Result};
use crate::train::{Model, RunSnapshot};

/// How per-window representations of a long clip combine into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub clip_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_ms: Option<f64>,
    pub vector: Vec<f64>,
}

/// Centers (ms) of `segment_ms` windows hopped by `hop_ms` over a clip.
///
/// Clips shorter than one segment get a single zero-padded segment.
pub fn timestamp_centers(duration_ms: f64, segment_ms: f64, hop_ms: f64) -> Vec<f64> {
    assert!(segment_ms > 0.0 && hop_ms > 0.0);
    // Small tolerance so e.g. 1900 - 950 = 950 ms lands on an exact hop multiple.
    let count = if duration_ms < segment_ms { 1 } else { ((duration_ms - segment_ms) / hop_ms + 1e-9).floor() as usize + 1 };
    (0..count).map(|k| k as f64 * hop_ms + segment_ms / 2.0).collect()
}

/// Frozen-model embedding extraction. Never updates parameters or running statistics.
pub struct Extractor<'m> {
    model: &'m Model,
    norm_mode: NormMode,
    stats: Option<DatasetStats>,
    crop_frames: usize,
    pad_value: f64,
    batch_size: usize,
}

impl<'m> Extractor<'m> {
    pub fn new(model: &'m Model, snapshot: &RunSnapshot, stats: Option<DatasetStats>) -> Result<Self> {
        let norm_mode = snapshot.augment.norm_mode;
        if norm_mode == NormMode::Dataset && stats.is_none() {
            return Err(Error::Config("dataset normalization needs dataset statistics".into()));
        }
        Ok(Self {
            model,
            norm_mode,
            stats,
            crop_frames: snapshot.train.crop_frames,
            pad_value: snapshot.mel.silence_value(),
            batch_size: 32,
        })
    }

    pub fn crop_frames(&self) -> usize {
        self.crop_frames
    }

    fn encode(&self, windows: &[Spectrogram]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(self.batch_size) {
            let normed: Vec<Spectrogram> = match self.norm_mode {
                NormMode::Dataset => chunk.iter().map(|w| normalize(w, self.stats.as_ref().expect("checked in new"))).collect(),
                // Each window is standardized on its own, independent of batching.
                NormMode::PrePost => chunk
                    .iter()
                    .map(|w| Ok(pre_post_norm(std::slice::from_ref(w), NormStage::Pre)?.remove(0)))
                    .collect::<Result<_>>()?,
            };
            let reps = self.model.represent(&stack_batch(&normed)?)?;
            out.extend(reps.data().chunks(reps.last_dim()).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Per-window representations for consecutive windows covering the clip.
    pub fn window_representations(&self, spec: &Spectrogram) -> Result<Vec<Vec<f64>>> {
        if spec.n_frames == 0 {
            return Err(Error::ClipTooShort { samples: 0, window: 1 });
        }
        let n = spec.n_frames.div_ceil(self.crop_frames);
        let windows: Vec<Spectrogram> = (0..n).map(|k| spec.frames(k * self.crop_frames, self.crop_frames, self.pad_value)).collect();
        self.encode(&windows)
    }

    /// One vector per clip, pooled over windows.
    pub fn scene(&self, clip_id: &str, spec: &Spectrogram, pooling: Pooling) -> Result<EmbeddingRecord> {
        let reps = self.window_representations(spec)?;
        let dim = reps[0].len();
        let vector = match pooling {
            Pooling::Mean => (0..dim).map(|j| reps.iter().map(|r| r[j]).sum::<f64>() / reps.len() as f64).collect(),
            Pooling::Max => (0..dim).map(|j| reps.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max)).collect(),
        };
        Ok(EmbeddingRecord { clip_id: clip_id.to_string(), timestamp_ms: None, vector })
    }

    /// One vector per segment, stamped with the segment center.
    pub fn timestamps(&self, clip_id: &str, spec: &Spectrogram, duration_ms: f64, segment_ms: f64, hop_ms: f64) -> Result<Vec<EmbeddingRecord>> {
        let seg_frames = (segment_ms / spec.frame_hop_ms).round() as usize + 1;
        if seg_frames != self.crop_frames {
            log::warn!("{segment_ms} ms segments span {seg_frames} frames; the encoder was trained on {}", self.crop_frames);
        }
        let centers = timestamp_centers(duration_ms, segment_ms, hop_ms);
        let windows: Vec<Spectrogram> = centers
            .iter()
            .map(|c| {
                let start = ((c - segment_ms / 2.0) / spec.frame_hop_ms).round() as usize;
                spec.frames(start.min(spec.n_frames), seg_frames, self.pad_value)
            })
            .collect();
        let reps = self.encode(&windows)?;
        Ok(centers
            .into_iter()
            .zip(reps)
            .map(|(t, vector)| EmbeddingRecord { clip_id: clip_id.to_string(), timestamp_ms: Some(t), vector })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Enumerates window starts directly.
    fn enumerate(duration: f64, seg: f64, hop: f64) -> usize {
        let mut n = 0;
        let mut start = 0.0;
        while start + seg <= duration + 1e-9 {
            n += 1;
            start += hop;
        }
        n.max(1)
    }

    #[test]
    fn segment_counts() {
        assert_eq!(timestamp_centers(1900.0, 950.0, 50.0).len(), 20);
        assert_eq!(timestamp_centers(950.0, 950.0, 50.0), vec![475.0]);
        assert_eq!(timestamp_centers(949.0, 950.0, 50.0).len(), 1);
        for d in (0..4000).step_by(7) {
            assert_eq!(timestamp_centers(d as f64, 950.0, 50.0).len(), enumerate(d as f64, 950.0, 50.0), "duration {d}");
        }
    }
}
