//! Grid sweep: short pretraining plus probe per configuration point, ranked by probe metric.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::eval::LabelRow;
use crate::pipeline::{embed_clips, probe_records};
use crate::train::{pretrain, RunPaths, TrainData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub id: String,
    /// Overrides relative to the base config, e.g. `train.optimizer = { kind = "lars" }`.
    #[serde(default)]
    pub overrides: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub point: Vec<SweepPoint>,
}

impl SweepGrid {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let grid: Self = toml::from_str(s).map_err(|e| Error::Config(format!("sweep grid: {e}")))?;
        if grid.point.is_empty() {
            return Err(Error::Config("sweep grid has no points".into()));
        }
        let mut seen = HashSet::new();
        for p in &grid.point {
            if p.id.is_empty() || p.id.contains(['/', '\\']) {
                return Err(Error::Config(format!("sweep point id `{}` is not a valid name", p.id)));
            }
            if !seen.insert(p.id.as_str()) {
                return Err(Error::Config(format!("duplicate sweep point id `{}`", p.id)));
            }
        }
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Flattens nested override tables to dotted keys. Tables with a `kind` tag replace the target whole.
pub fn flatten_overrides(table: &toml::Table) -> Vec<(String, toml::Value)> {
    fn walk(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
        for (k, v) in table {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(t) if !t.contains_key("kind") => walk(&key, t, out),
                _ => out.push((key, v.clone())),
            }
        }
    }
    let mut out = Vec::new();
    walk("", table, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config_id: String,
    pub probe_metric: f64,
    pub final_loss: f64,
}

pub fn results_path(out_dir: &Path) -> PathBuf {
    out_dir.join("sweep_results.csv")
}

pub fn report_path(out_dir: &Path) -> PathBuf {
    out_dir.join("sweep_report.csv")
}

pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader.deserialize().map(|r| r.map_err(csv_err)).collect()
}

fn append_row(path: &Path, row: &SweepRow) -> Result<()> {
    let fresh = !path.exists();
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("sweep csv: {e}"))
}

/// Rows sorted by probe metric, best first; ties keep grid order.
pub fn rank(rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut out = rows.to_vec();
    out.sort_by(|a, b| b.probe_metric.total_cmp(&a.probe_metric));
    out
}

/// Runs every point not yet in the results file, then writes the ranked report.
///
/// Each finished point is appended immediately, so an interrupted sweep resumes where it stopped.
pub fn run_sweep(base: &RunConfig, grid: &SweepGrid, manifest: &Manifest, data: &TrainData, labels: &[LabelRow], out_dir: &Path) -> Result<Vec<SweepRow>> {
    std::fs::create_dir_all(out_dir)?;
    let results = results_path(out_dir);
    let mut rows = read_rows(&results)?;
    let known: HashSet<&str> = grid.point.iter().map(|p| p.id.as_str()).collect();
    if let Some(stray) = rows.iter().find(|r| !known.contains(r.config_id.as_str())) {
        return Err(Error::Config(format!("{} holds point `{}` which is not in the grid", results.display(), stray.config_id)));
    }
    // Validate every point before spending compute on any of them.
    let configs = grid
        .point
        .iter()
        .map(|p| {
            let cfg = base.with_overrides(flatten_overrides(&p.overrides).iter().map(|(k, v)| (k.as_str(), v.clone())))?;
            cfg.validate().map_err(|e| Error::Config(format!("sweep point `{}`: {e}", p.id)))?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    for (point, cfg) in grid.point.iter().zip(configs) {
        if rows.iter().any(|r| r.config_id == point.id) {
            log::info!("sweep point `{}` already done; skipping", point.id);
            continue;
        }
        log::info!("sweep point `{}`", point.id);
        let snapshot = cfg.snapshot();
        let point_dir = out_dir.join("points").join(&point.id);
        std::fs::create_dir_all(&point_dir)?;
        std::fs::write(point_dir.join("config.toml"), cfg.to_toml()?)?;
        let (trainer, _) = pretrain(&snapshot, data, &RunPaths { out_dir: Some(point_dir) }, None)?;
        let final_loss = trainer.history.last().map_or(f64::NAN, |m| m.loss);
        let records = embed_clips(&trainer.model, &snapshot, data.stats.clone(), manifest, &data.clips, &cfg.embed)?;
        let report = probe_records(&records, labels, &cfg.probe, cfg.train.seed)?;
        let row = SweepRow { config_id: point.id.clone(), probe_metric: report.value, final_loss };
        append_row(&results, &row)?;
        rows.push(row);
    }
    let order: Vec<&str> = grid.point.iter().map(|p| p.id.as_str()).collect();
    rows.sort_by_key(|r| order.iter().position(|id| *id == r.config_id));
    let ranked = rank(&rows);
    let mut w = csv::Writer::from_path(report_path(out_dir)).map_err(csv_err)?;
    for r in &ranked {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(ranked)
}
