//! Artifact layout, checksums and run manifests.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn data(&self, scenario: &str) -> PathBuf {
        self.root.join("data").join(scenario)
    }
    pub fn prep(&self) -> PathBuf {
        self.root.join("prep")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
    pub fn manifests(&self) -> PathBuf {
        self.root.join("manifests")
    }
    pub fn autoencoder(&self) -> PathBuf {
        self.models().join("autoencoder.json")
    }
    pub fn detector(&self) -> PathBuf {
        self.models().join("detector.json")
    }
    pub fn classifier(&self) -> PathBuf {
        self.models().join("classifier.json")
    }
    pub fn ttr(&self, scenario: &str) -> PathBuf {
        self.models().join(format!("ttr_{scenario}.json"))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Checksum of every file under `dir`, in path order.
pub fn sha256_tree(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect(dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap_or(&f).to_string_lossy().as_bytes());
        h.update(fs::read(&f)?);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.is_dir() {
            collect(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    args: Vec<String>,
    config: String,
    seeds: &'a [(&'a str, u64)],
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
    wall_time_s: f64,
}

/// Records one command's inputs, outputs and resolved configuration.
pub struct Run<'a> {
    pub layout: &'a Layout,
    pub command: &'a str,
    pub config_text: String,
    pub seeds: Vec<(&'static str, u64)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    start: Instant,
}

impl<'a> Run<'a> {
    pub fn new(layout: &'a Layout, command: &'a str, config_text: String) -> Self {
        Run {
            layout,
            command,
            config_text,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        }
    }

    fn entries(&self, paths: &[PathBuf]) -> Result<Vec<FileEntry>> {
        paths
            .iter()
            .map(|p| {
                let sha256 = if p.is_dir() { sha256_tree(p)? } else { sha256_file(p)? };
                let path = p.strip_prefix(&self.layout.root).unwrap_or(p).to_string_lossy().into_owned();
                Ok(FileEntry { path, sha256 })
            })
            .collect()
    }

    pub fn finish(self) -> Result<()> {
        let dir = self.layout.manifests();
        let config_file = dir.join(format!("{}.config", self.command));
        write_text(&config_file, &self.config_text)?;
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            args: std::env::args().collect(),
            config: config_file.file_name().unwrap().to_string_lossy().into_owned(),
            seeds: &self.seeds,
            inputs: self.entries(&self.inputs)?,
            outputs: self.entries(&self.outputs)?,
            wall_time_s: self.start.elapsed().as_secs_f64(),
        };
        write_json(&dir.join(format!("{}.json", self.command)), &manifest)?;
        log::info!("{} finished in {:.1}s", self.command, manifest.wall_time_s);
        Ok(())
    }
}
