use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub path: PathBuf,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Ordered list of clips. Persisted as JSON Lines, one entry per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.clip_id.as_str()) {
                return Err(Error::invalid(format!("duplicate clip_id `{}`", e.clip_id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<Option<String>> {
        self.entries.iter().map(|e| e.label.clone()).collect()
    }

    /// Writes JSON Lines. Paths are stored as given.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    /// Reads JSON Lines; relative paths resolve against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let reader = BufReader::new(fs::File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut e: ManifestEntry = serde_json::from_str(&line)
                .map_err(|err| Error::invalid(format!("{}:{}: {err}", path.display(), i + 1)))?;
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            if !e.path.exists() {
                return Err(Error::invalid(format!("manifest entry `{}`: {} does not exist", e.clip_id, e.path.display())));
            }
            entries.push(e);
        }
        Self::new(entries)
    }
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    Ok(())
}

/// Scans `root` recursively for WAV files, sorted by path.
///
/// Unreadable files are skipped with a warning. A clip inside a subdirectory
/// takes the first path component below `root` as its label.
pub fn build_manifest(root: &Path) -> Result<Manifest> {
    if !root.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", root.display())));
    }
    let mut paths = Vec::new();
    collect_wavs(root, &mut paths)?;
    paths.sort();

    let mut entries = Vec::new();
    for path in paths {
        let reader = match hound::WavReader::open(&path) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping unreadable {}: {e}", path.display());
                continue;
            }
        };
        let spec = reader.spec();
        let duration_s = reader.duration() as f64 / spec.sample_rate as f64;
        let rel = path.strip_prefix(root).unwrap_or(&path);
        let clip_id = rel.with_extension("").to_string_lossy().replace('\\', "/");
        let label = rel
            .parent()
            .and_then(|p| p.components().next())
            .map(|c| c.as_os_str().to_string_lossy().into_owned());
        entries.push(ManifestEntry { clip_id, path, duration_s, label });
    }
    if entries.is_empty() {
        return Err(Error::NoAudioFiles(root.to_path_buf()));
    }
    Manifest::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{write_wav, Waveform};

    fn write_tone(path: &Path) {
        let w = Waveform::new(vec![0.1; 1600], 16_000).unwrap();
        write_wav(path, &w).unwrap();
    }

    #[test]
    fn sorted_entries_and_text_files_ignored() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["c.wav", "a.wav", "b.wav"] {
            write_tone(&dir.path().join(name));
        }
        let m = build_manifest(dir.path()).unwrap();
        assert_eq!(m.len(), 3);
        let ids: Vec<_> = m.entries.iter().map(|e| e.clip_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!((m.entries[0].duration_s - 0.1).abs() < 1e-12);

        fs::remove_file(dir.path().join("c.wav")).unwrap();
        fs::write(dir.path().join("notes.txt"), "hello").unwrap();
        assert_eq!(build_manifest(dir.path()).unwrap().len(), 2);
    }

    #[test]
    fn empty_directory_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(build_manifest(dir.path()), Err(Error::NoAudioFiles(_))));
    }

    #[test]
    fn unreadable_wav_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_tone(&dir.path().join("good.wav"));
        fs::write(dir.path().join("bad.wav"), b"not a wav").unwrap();
        let m = build_manifest(dir.path()).unwrap();
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn jsonl_roundtrip_with_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("dog")).unwrap();
        write_tone(&dir.path().join("dog/x.wav"));
        let m = Manifest::new(vec![ManifestEntry {
            clip_id: "x".into(),
            path: "dog/x.wav".into(),
            duration_s: 0.1,
            label: Some("dog".into()),
        }])
        .unwrap();
        let mpath = dir.path().join("m.jsonl");
        m.save(&mpath).unwrap();
        let back = Manifest::load(&mpath).unwrap();
        assert_eq!(back.entries[0].path, dir.path().join("dog/x.wav"));
        assert_eq!(back.entries[0].label.as_deref(), Some("dog"));

        let scanned = build_manifest(dir.path()).unwrap();
        assert_eq!(scanned.entries[0].label.as_deref(), Some("dog"));
        assert_eq!(scanned.entries[0].clip_id, "dog/x");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = ManifestEntry { clip_id: "a".into(), path: "a.wav".into(), duration_s: 1.0, label: None };
        assert!(Manifest::new(vec![e.clone(), e]).is_err());
    }
}
