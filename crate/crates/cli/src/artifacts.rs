//! The output directory and its manifest.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files written so far, with their digests.
pub struct Artifacts {
    dir: PathBuf,
    files: BTreeMap<String, String>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config: String,
    config_sha256: &'a str,
    version: &'a str,
    warnings: &'a [String],
    files: &'a BTreeMap<String, String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: BTreeMap::new(), warnings: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        log::debug!("wrote {name}");
        Ok(())
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.warnings.push(message);
    }

    /// Records a warning already logged elsewhere.
    pub fn record(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    /// Writes `manifest.toml` listing every file written before.
    pub fn finish(self, command: &str, seed: u64, config: &Path, config_sha256: &str) -> io::Result<PathBuf> {
        let manifest = Manifest {
            command,
            seed,
            config: config.display().to_string(),
            config_sha256,
            version: env!("CARGO_PKG_VERSION"),
            warnings: &self.warnings,
            files: &self.files,
        };
        let text = toml::to_string(&manifest).map_err(io::Error::other)?;
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
