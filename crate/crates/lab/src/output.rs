//! Artifact writing: CSV, JSON, SVG and the hash manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

pub const MANIFEST: &str = "manifest.json";

/// Shortest round-trip text for a float; identical across runs.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_sha256: String,
    pub files: Vec<ManifestEntry>,
}

/// Writes files under one directory and remembers them for the manifest.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        Ok(Outputs { dir: dir.to_path_buf(), entries: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| LabError::io(&path, e))?;
        self.entries.retain(|e| e.path != name);
        self.entries.push(ManifestEntry { path: name.to_string(), bytes: contents.len() as u64, sha256: sha256_hex(contents) });
        Ok(path)
    }

    pub fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf> {
        let failed = |e: csv::Error| LabError::Io { path: self.dir.join(name).display().to_string(), message: e.to_string() };
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).map_err(failed)?;
        for row in rows {
            writer.write_record(row).map_err(failed)?;
        }
        let bytes = writer.into_inner().map_err(|e| LabError::Io { path: name.to_string(), message: e.to_string() })?;
        self.write(name, &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| LabError::Config(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn files(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(mut self, experiment: &str, config_text: &str) -> Result<Manifest> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest =
            Manifest { experiment: experiment.to_string(), config_sha256: sha256_hex(config_text.as_bytes()), files: self.entries.clone() };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| LabError::Config(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| LabError::io(&path, e))?;
        Ok(manifest)
    }
}

/// Header `prefix_1..prefix_d`.
pub fn coords(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("{prefix}_{k}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn floats_print_round_trip() {
        for v in [0.1, 1e-5, -2.5e300, 1.0 / 3.0] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(1.0), "1.0");
    }

    #[test]
    fn manifest_lists_every_file() {
        let dir = std::env::temp_dir().join(format!("scoremem-out-{}", std::process::id()));
        let mut out = Outputs::create(&dir).unwrap();
        out.csv("a.csv", &["x".into()], &[vec!["1".into()]]).unwrap();
        out.write("b.txt", b"hello").unwrap();
        out.csv("c.csv", &["label".into()], &[vec!["a,b".into()]]).unwrap();
        assert_eq!(std::fs::read_to_string(dir.join("c.csv")).unwrap(), "label\n\"a,b\"\n");
        out.write("a.csv", b"x\n2\n").unwrap();
        let m = out.finish("demo", "cfg").unwrap();
        assert_eq!(m.files.len(), 3);
        assert_eq!(m.files[0].path, "a.csv");
        assert_eq!(m.files[0].bytes, 4);
        assert_eq!(m.files[1].path, "b.txt");
        assert_eq!(m.files[1].sha256, sha256_hex(b"hello"));
        assert!(dir.join(MANIFEST).exists());
        std::fs::remove_dir_all(&dir).ok();
    }
}
