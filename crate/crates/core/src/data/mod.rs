//! Manifests, dataset statistics and the synthetic audio generator.

mod manifest;
mod stats;
mod synth;

pub use manifest::{build_manifest, Manifest, ManifestEntry};
pub use stats::{dataset_stats, stats_from_spectrograms, DatasetStats, MomentAccumulator, PerBinStats};
pub use synth::{synth_dataset, synth_waveform, SynthClass, SynthKind, SynthSpec};
