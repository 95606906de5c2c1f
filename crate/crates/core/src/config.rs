//! Run configuration: one TOML file with strict sections, plus dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::dsp::MelConfig;
use crate::error::{Error, Result};
use crate::eval::{default_probe_grid, Pooling, ProbeConfig};
use crate::train::{RunSnapshot, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    #[default]
    Scene,
    Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub mode: EmbedMode,
    pub pooling: Pooling,
    pub segment_ms: f64,
    pub hop_ms: f64,
    /// Also write a CSV copy of the embeddings.
    pub csv: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { mode: EmbedMode::Scene, pooling: Pooling::Mean, segment_ms: 950.0, hop_ms: 50.0, csv: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub task_name: String,
    pub multilabel: bool,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Probe configurations to select from; empty means the default eight.
    pub grid: Vec<ProbeConfig>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self { task_name: "task".into(), multilabel: false, val_fraction: 0.2, test_fraction: 0.2, grid: Vec::new() }
    }
}

impl ProbeSection {
    pub fn grid(&self) -> Vec<ProbeConfig> {
        if self.grid.is_empty() {
            default_probe_grid()
        } else {
            self.grid.clone()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mel: MelConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub embed: EmbedConfig,
    pub probe: ProbeSection,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for slot in [&mut p.manifest, &mut p.stats, &mut p.checkpoint, &mut p.labels, &mut p.embeddings, &mut p.out_dir] {
            if let Some(v) = slot.as_mut() {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `section.key = value` overrides; values parse as TOML, falling back to strings.
    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = (&'a str, toml::Value)>) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for (key, value) in overrides {
            set_dotted(&mut root, key, value)?;
        }
        let text = toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("after overrides: {e}")))
    }

    /// Parses `key=value` strings as given on a command line.
    pub fn with_cli_overrides(&self, pairs: &[String]) -> Result<Self> {
        let parsed = pairs
            .iter()
            .map(|p| {
                let (k, v) = p.split_once('=').ok_or_else(|| Error::Config(format!("override `{p}` is not key=value")))?;
                Ok((k.trim(), parse_value(v.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        self.with_overrides(parsed)
    }

    pub fn snapshot(&self) -> RunSnapshot {
        RunSnapshot { mel: self.mel.clone(), augment: self.augment.clone(), train: self.train.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.snapshot().validate()?;
        for p in self.probe.grid() {
            p.validate()?;
        }
        if !(self.embed.segment_ms > 0.0 && self.embed.hop_ms > 0.0) {
            return Err(Error::Config("embed: segment_ms and hop_ms must be positive".into()));
        }
        Ok(())
    }
}

/// Parses a bare override value as TOML (number, bool, array, ...) or else a string.
pub fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| Error::Config(format!("override `{key}`: `{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(Error::Config("empty override key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::optim::OptimizerConfig;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("[train]\nbatch_sise = 4\n").unwrap_err();
        assert!(err.to_string().contains("batch_sise"), "{err}");
        assert!(RunConfig::from_toml_str("[nope]\n").is_err());
    }

    #[test]
    fn nested_sections_parse() {
        let cfg = RunConfig::from_toml_str(
            r#"
            [train]
            batch_size = 4
            [train.encoder]
            kind = "audio_ntt"
            fc_width = 32
            [train.optimizer]
            kind = "lars"
            lr_weights = 0.2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.train.batch_size, 4);
        assert!(matches!(cfg.train.encoder, EncoderConfig::AudioNtt(ref c) if c.fc_width == 32 && c.conv_channels == 64));
        assert!(matches!(cfg.train.optimizer, OptimizerConfig::Lars(ref c) if c.lr_weights == 0.2 && c.lr_biases == 0.0048));
    }

    #[test]
    fn overrides_apply_and_stay_strict() {
        let cfg = RunConfig::default();
        let out = cfg.with_cli_overrides(&["train.batch_size=8".into(), "train.loss.lambda=0".into(), "augment.norm_mode=pre_post".into()]).unwrap();
        assert_eq!(out.train.batch_size, 8);
        assert_eq!(out.train.loss.lambda, 0.0);
        assert!(cfg.with_cli_overrides(&["train.bogus=1".into()]).is_err());
        assert!(cfg.with_cli_overrides(&["novalue".into()]).is_err());
    }
}
