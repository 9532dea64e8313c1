//! Locating and loading the recordings of a data directory.
//!
//! A condition is a stem `S` with `S_eeg.<ext>` and `S_imu.<ext>` next to each other, as
//! written by `generate`. `S_clean.<ext>` and `S_coupling.txt` are picked up when present.

use std::fs;
use std::path::{Path, PathBuf};

use cohwash_core::signal::{frame_pairs, load_recording, preprocess_eeg, preprocess_imu, FileFormat};
use cohwash_core::synth::Coupling;
use cohwash_core::{Error, FramePair, PreprocessConfig, Recording, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub eeg: PathBuf,
    pub imu: PathBuf,
    pub clean: Option<PathBuf>,
    pub coupling: Option<PathBuf>,
}

/// Preprocessed streams of one condition, cut into aligned 1-s frames.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub eeg: Recording,
    pub imu: Recording,
    pub frames: Vec<FramePair>,
    pub coupling: Option<Coupling>,
}

fn sibling(dir: &Path, stem: &str, kind: &str, ext: &str) -> Option<PathBuf> {
    let p = dir.join(format!("{stem}_{kind}.{ext}"));
    p.is_file().then_some(p)
}

/// Every condition in `dir`, sorted by name.
pub fn discover(dir: &Path) -> Result<Vec<Condition>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some((stem, ext)) = name.rsplit_once('.') else {
            continue;
        };
        let Some(stem) = stem.strip_suffix("_eeg") else {
            continue;
        };
        let imu = sibling(dir, stem, "imu", ext).ok_or_else(|| {
            Error::Empty(format!("{} has no matching {stem}_imu.{ext}", path.display()))
        })?;
        found.push(Condition {
            name: stem.to_string(),
            eeg: path.clone(),
            imu,
            clean: sibling(dir, stem, "clean", ext),
            coupling: sibling(dir, stem, "coupling", "txt"),
        });
    }
    if found.is_empty() {
        return Err(Error::Empty(format!("no *_eeg recordings in {}", dir.display())));
    }
    found.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(found)
}

/// Keeps the named conditions in the order given; an empty selection keeps all.
pub fn select(all: Vec<Condition>, names: &[String]) -> Result<Vec<Condition>> {
    if names.is_empty() {
        return Ok(all);
    }
    names
        .iter()
        .map(|n| {
            all.iter().find(|c| &c.name == n).cloned().ok_or_else(|| {
                let have: Vec<&str> = all.iter().map(|c| c.name.as_str()).collect();
                Error::Empty(format!("condition `{n}` not found (have {})", have.join(", ")))
            })
        })
        .collect()
}

impl Condition {
    pub fn load(&self, cfg: &PreprocessConfig) -> Result<Loaded> {
        let eeg = preprocess_eeg(&load_recording(&self.eeg, FileFormat::from_path(&self.eeg))?, cfg)?;
        let imu = preprocess_imu(&load_recording(&self.imu, FileFormat::from_path(&self.imu))?, cfg)?;
        let frames = frame_pairs(&eeg, &imu)?;
        let coupling = match &self.coupling {
            Some(p) => Some(Coupling::from_text(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?),
            None => None,
        };
        Ok(Loaded {
            eeg,
            imu,
            frames,
            coupling,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) {
        fs::write(dir.join(name), "").unwrap();
    }

    #[test]
    fn finds_pairs_and_sidecars() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["b_eeg.csv", "b_imu.csv", "a_eeg.bin", "a_imu.bin", "a_clean.bin", "a_coupling.txt", "notes.md"] {
            touch(dir.path(), f);
        }
        let found = discover(dir.path()).unwrap();
        let names: Vec<&str> = found.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
        assert!(found[0].clean.is_some() && found[0].coupling.is_some());
        assert!(found[1].clean.is_none());
        let picked = select(found, &["b".into()]).unwrap();
        assert_eq!(picked.len(), 1);
    }

    #[test]
    fn empty_or_unpaired_dirs_fail() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(discover(dir.path()), Err(Error::Empty(_))));
        touch(dir.path(), "x_eeg.csv");
        assert!(discover(dir.path()).unwrap_err().to_string().contains("x_imu.csv"));
    }
}
