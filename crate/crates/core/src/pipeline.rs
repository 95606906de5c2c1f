//! End-to-end steps shared by the command line and the sweep runner.

use crate::augment::NormMode;
use crate::config::{EmbedConfig, EmbedMode, ProbeSection, RunConfig};
use crate::data::{stats_from_spectrograms, DatasetStats, Manifest};
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::eval::{stratified_split, task_labels, train_probe, EmbeddingRecord, Extractor, LabelRow, LabelValue, ProbeReport};
use crate::train::{Model, RunSnapshot, TrainData};

/// Loads the configured manifest, its spectrograms and normalization statistics.
///
/// Without a stats file, dataset normalization falls back to statistics of the loaded clips.
pub fn load_train_data(cfg: &RunConfig) -> Result<(Manifest, TrainData)> {
    let path = cfg.paths.manifest.as_ref().ok_or_else(|| Error::Config("paths.manifest is not set".into()))?;
    let manifest = Manifest::load(path)?;
    let stats = cfg.paths.stats.as_ref().map(|p| DatasetStats::load(p)).transpose()?;
    let mut data = TrainData::from_manifest(&manifest, &cfg.mel, stats)?;
    if data.stats.is_none() && cfg.augment.norm_mode == NormMode::Dataset {
        log::info!("no stats file given; computing statistics over {} clips", data.clips.len());
        data.stats = Some(stats_from_spectrograms(&data.clips, &cfg.mel, false)?);
    }
    Ok((manifest, data))
}

/// Embeds every clip of `manifest`; `clips` are its spectrograms in order.
pub fn embed_clips(
    model: &Model,
    snapshot: &RunSnapshot,
    stats: Option<DatasetStats>,
    manifest: &Manifest,
    clips: &[Spectrogram],
    embed: &EmbedConfig,
) -> Result<Vec<EmbeddingRecord>> {
    if clips.len() != manifest.len() {
        return Err(Error::shape(format!("{} spectrograms for {} manifest entries", clips.len(), manifest.len())));
    }
    let ex = Extractor::new(model, snapshot, stats)?;
    let mut out = Vec::new();
    for (e, spec) in manifest.entries.iter().zip(clips) {
        match embed.mode {
            EmbedMode::Scene => out.push(ex.scene(&e.clip_id, spec, embed.pooling)?),
            EmbedMode::Timestamp => out.extend(ex.timestamps(&e.clip_id, spec, e.duration_s * 1000.0, embed.segment_ms, embed.hop_ms)?),
        }
    }
    Ok(out)
}

/// Labels carried by the manifest itself (e.g. from class subdirectories).
pub fn manifest_labels(manifest: &Manifest) -> Result<Vec<LabelRow>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let label = e.label.clone().ok_or_else(|| Error::invalid(format!("manifest entry `{}` has no label", e.clip_id)))?;
            Ok(LabelRow { clip_id: e.clip_id.clone(), label: LabelValue::One(label) })
        })
        .collect()
}

/// Stratified split plus probe selection over clip-level embeddings.
pub fn probe_records(records: &[EmbeddingRecord], rows: &[LabelRow], probe: &ProbeSection, seed: u64) -> Result<ProbeReport> {
    if records.iter().any(|r| r.timestamp_ms.is_some()) {
        return Err(Error::invalid("the probe takes clip-level (scene) embeddings"));
    }
    let ids: Vec<String> = records.iter().map(|r| r.clip_id.clone()).collect();
    let labels = task_labels(&ids, rows, probe.multilabel)?;
    let split = stratified_split(&labels.strata(), probe.val_fraction, probe.test_fraction, seed)?;
    let x: Vec<Vec<f64>> = records.iter().map(|r| r.vector.clone()).collect();
    train_probe(&probe.task_name, &x, &labels, &split, &probe.grid(), seed)
}
