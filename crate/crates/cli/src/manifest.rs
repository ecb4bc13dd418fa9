use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub threads: usize,
    pub strict_deterministic: bool,
    pub config: serde_json::Value,
    pub files: Vec<FileEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes outputs into one directory and remembers their checksums.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        std::fs::write(self.root.join(name), bytes)?;
        self.files.push(FileEntry { name: name.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn finish(self, mut manifest: Manifest) -> std::io::Result<()> {
        manifest.files = self.files;
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(self.root.join(MANIFEST_NAME), text + "\n")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileCheck {
    pub name: String,
    pub ok: bool,
}

/// Recomputes every checksum listed in `dir/manifest.json`.
pub fn verify(dir: &Path) -> std::io::Result<(Manifest, Vec<FileCheck>)> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let checks = manifest
        .files
        .iter()
        .map(|f| {
            let ok = std::fs::read(dir.join(&f.name)).map(|b| sha256_hex(&b) == f.sha256).unwrap_or(false);
            FileCheck { name: f.name.clone(), ok }
        })
        .collect();
    Ok((manifest, checks))
}
