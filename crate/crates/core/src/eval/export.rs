use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbeddingRecord, TaskLabels};
use crate::error::{Error, Result};
use crate::provenance::CODE_VERSION;

/// Metadata written next to an embedding matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub clip_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Vec<f64>>,
    pub dim: usize,
    pub checkpoint_hash: String,
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub code_version: String,
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes row-major little-endian `f32` vectors to `bin` and the JSON sidecar beside it.
pub fn write_embeddings(records: &[EmbeddingRecord], bin: &Path, checkpoint_hash: &str, config_hash: &str) -> Result<EmbeddingSidecar> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    if records.iter().any(|r| r.vector.len() != dim) {
        return Err(Error::shape("embedding records differ in dimension"));
    }
    let mut out = BufWriter::new(File::create(bin)?);
    for r in records {
        for &v in &r.vector {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    let timestamps = records.iter().map(|r| r.timestamp_ms).collect::<Option<Vec<f64>>>();
    let sidecar = EmbeddingSidecar {
        clip_ids: records.iter().map(|r| r.clip_id.clone()).collect(),
        timestamps: if records.is_empty() { None } else { timestamps },
        dim,
        checkpoint_hash: checkpoint_hash.to_string(),
        config_hash: config_hash.to_string(),
        code_version: CODE_VERSION.to_string(),
    };
    std::fs::write(sidecar_path(bin), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(sidecar)
}

pub fn read_embeddings(bin: &Path) -> Result<(EmbeddingSidecar, Vec<EmbeddingRecord>)> {
    let sidecar: EmbeddingSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(bin))?)?;
    let mut bytes = Vec::new();
    File::open(bin)?.read_to_end(&mut bytes)?;
    let n = sidecar.clip_ids.len();
    if bytes.len() != n * sidecar.dim * 4 {
        return Err(Error::shape(format!("{} holds {} bytes, sidecar describes {n} x {}", bin.display(), bytes.len(), sidecar.dim)));
    }
    let values: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64).collect();
    let records = (0..n)
        .map(|i| EmbeddingRecord {
            clip_id: sidecar.clip_ids[i].clone(),
            timestamp_ms: sidecar.timestamps.as_ref().map(|t| t[i]),
            vector: values[i * sidecar.dim..(i + 1) * sidecar.dim].to_vec(),
        })
        .collect();
    Ok((sidecar, records))
}

pub fn write_embeddings_csv(records: &[EmbeddingRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let dim = records.first().map_or(0, |r| r.vector.len());
    let mut header = vec!["clip_id".to_string(), "timestamp_ms".to_string()];
    header.extend((0..dim).map(|j| format!("e{j}")));
    let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.clip_id.clone(), r.timestamp_ms.map_or(String::new(), |t| t.to_string())];
        row.extend(r.vector.iter().map(|v| (*v as f32).to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One line of a labels file: a single class or a list of classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRow {
    pub clip_id: String,
    pub label: LabelValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelValue {
    One(String),
    Many(Vec<String>),
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(rows)
}

pub fn write_labels(rows: &[LabelRow], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Aligns labels with clip ids. Any list-valued label (or `multilabel`) makes the task multilabel.
///
/// Class names are sorted so indices do not depend on file order.
pub fn task_labels(clip_ids: &[String], rows: &[LabelRow], multilabel: bool) -> Result<TaskLabels> {
    let by_id: HashMap<&str, &LabelValue> = rows.iter().map(|r| (r.clip_id.as_str(), &r.label)).collect();
    let mut per_clip = Vec::with_capacity(clip_ids.len());
    for id in clip_ids {
        let v = by_id.get(id.as_str()).ok_or_else(|| Error::invalid(format!("no label for clip `{id}`")))?;
        per_clip.push(match v {
            LabelValue::One(s) => vec![s.clone()],
            LabelValue::Many(v) => v.clone(),
        });
    }
    let multilabel = multilabel || rows.iter().any(|r| matches!(r.label, LabelValue::Many(_)));
    let mut classes: Vec<String> = per_clip.iter().flatten().cloned().collect();
    classes.sort();
    classes.dedup();
    let index = |c: &String| classes.binary_search(c).expect("class collected above");
    Ok(if multilabel {
        let targets = per_clip
            .iter()
            .map(|ls| {
                let mut t = vec![false; classes.len()];
                ls.iter().for_each(|l| t[index(l)] = true);
                t
            })
            .collect();
        TaskLabels::Multilabel { classes, targets }
    } else {
        let targets = per_clip.iter().map(|ls| index(&ls[0])).collect();
        TaskLabels::Multiclass { classes, targets }
    })
}
