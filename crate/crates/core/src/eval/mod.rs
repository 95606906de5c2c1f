//! Frozen-embedding evaluation: extraction, export, metrics and the MLP probe.

mod export;
mod extract;
mod metric;
mod probe;
mod split;

pub use export::{
    read_embeddings, read_labels, sidecar_path, task_labels, write_embeddings, write_embeddings_csv, write_labels, EmbeddingSidecar,
    LabelRow, LabelValue,
};
pub use extract::{timestamp_centers, EmbeddingRecord, Extractor, Pooling};
pub use metric::{argmax, average_precision, compute_metric, TaskLabels, TaskType};
pub use probe::{default_probe_grid, fit_probe, train_probe, FittedProbe, ProbeConfig, ProbeReport, ProbeRun};
pub use split::{stratified_split, Split};
