use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Per-step training diagnostics, one JSON line each in the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub invariance_term: f64,
    pub redundancy_term: f64,
    pub offdiag_mean_abs: f64,
    pub diag_mean: f64,
    /// Smallest per-feature batch standard deviation over both embedding batches.
    pub feature_std_min: f64,
    pub feature_std_mean: f64,
    pub mask_ratio: f64,
    pub lr_mult: f64,
}

/// Append-only JSON Lines writer.
pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    /// Opens `path`, keeping only records with `step <= keep_through` (for resumed runs).
    pub fn open(path: &Path, keep_through: u64) -> Result<Self> {
        let kept = if path.exists() && keep_through > 0 {
            read_metrics(path)?.into_iter().filter(|m| m.step <= keep_through).collect()
        } else {
            Vec::new()
        };
        let mut out = BufWriter::new(File::create(path)?);
        for m in &kept {
            serde_json::to_writer(&mut out, m)?;
            out.write_all(b"\n")?;
        }
        Ok(Self { path: path.to_path_buf(), out })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, m: &StepMetrics) -> Result<()> {
        serde_json::to_writer(&mut self.out, m)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollapseConfig {
    /// Logged steps required before a verdict.
    pub min_steps: usize,
    /// Consecutive low-spread steps that count as collapse.
    pub window: usize,
    /// Early steps whose median feature spread sets the reference.
    pub reference_steps: usize,
    /// Threshold as a fraction of the reference spread.
    pub rel_threshold: f64,
    pub abs_floor: f64,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        Self { min_steps: 100, window: 50, reference_steps: 20, rel_threshold: 0.1, abs_floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseDiagnosis {
    /// `None` when the log is too short to judge.
    pub collapsed: Option<bool>,
    /// First step of the offending window.
    pub onset_step: Option<u64>,
    pub reference_std: f64,
    pub threshold: f64,
    pub final_std_min: f64,
}

/// Flags representational collapse: the smallest per-feature spread staying
/// below a fraction of its early typical value for a whole window of steps.
pub fn collapse_probe(log: &[StepMetrics], cfg: &CollapseConfig) -> CollapseDiagnosis {
    let n_ref = cfg.reference_steps.clamp(1, log.len().max(1));
    let mut early: Vec<f64> = log.iter().take(n_ref).map(|m| m.feature_std_mean).collect();
    early.sort_by(f64::total_cmp);
    let reference_std = early.get(early.len() / 2).copied().unwrap_or(0.0);
    let threshold = (cfg.rel_threshold * reference_std).max(cfg.abs_floor);
    let final_std_min = log.last().map_or(f64::NAN, |m| m.feature_std_min);
    if log.len() < cfg.min_steps {
        return CollapseDiagnosis { collapsed: None, onset_step: None, reference_std, threshold, final_std_min };
    }
    let mut run = 0usize;
    let mut onset = None;
    for (i, m) in log.iter().enumerate() {
        // NaN spread counts as collapsed.
        if !(m.feature_std_min >= threshold) {
            run += 1;
            if run >= cfg.window.max(1) {
                onset = Some(log[i + 1 - run].step);
                break;
            }
        } else {
            run = 0;
        }
    }
    CollapseDiagnosis { collapsed: Some(onset.is_some()), onset_step: onset, reference_std, threshold, final_std_min }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(step: u64, std_min: f64, std_mean: f64) -> StepMetrics {
        StepMetrics {
            step,
            epoch: 0,
            loss: 1.0,
            invariance_term: 1.0,
            redundancy_term: 0.0,
            offdiag_mean_abs: 0.0,
            diag_mean: 0.0,
            feature_std_min: std_min,
            feature_std_mean: std_mean,
            mask_ratio: 0.0,
            lr_mult: 1.0,
        }
    }

    #[test]
    fn constant_stream_is_flagged() {
        let log: Vec<_> = (1..=120).map(|s| m(s, 0.0, 0.0)).collect();
        let d = collapse_probe(&log, &CollapseConfig::default());
        assert_eq!(d.collapsed, Some(true));
        assert_eq!(d.onset_step, Some(1));
    }

    #[test]
    fn healthy_stream_is_not_flagged() {
        let log: Vec<_> = (1..=120).map(|s| m(s, 0.8, 1.0)).collect();
        assert_eq!(collapse_probe(&log, &CollapseConfig::default()).collapsed, Some(false));
    }

    #[test]
    fn late_collapse_is_flagged_and_short_logs_abstain() {
        let log: Vec<_> = (1..=200).map(|s| if s > 100 { m(s, 0.01, 0.02) } else { m(s, 0.8, 1.0) }).collect();
        let d = collapse_probe(&log, &CollapseConfig::default());
        assert_eq!(d.onset_step, Some(101));
        assert_eq!(collapse_probe(&log[..50], &CollapseConfig::default()).collapsed, None);
    }

    #[test]
    fn log_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.jsonl");
        let mut log = MetricsLog::open(&p, 0).unwrap();
        for s in 1..=5 {
            log.append(&m(s, 0.5 + s as f64 * 0.1, 1.0 / 3.0)).unwrap();
        }
        log.flush().unwrap();
        drop(log);
        let back = read_metrics(&p).unwrap();
        assert_eq!(back.len(), 5);
        assert_eq!(back[2], m(3, 0.5 + 3.0 * 0.1, 1.0 / 3.0));
        drop(MetricsLog::open(&p, 3).unwrap());
        assert_eq!(read_metrics(&p).unwrap().len(), 3);
    }
}
