//! Run manifests and atomic output writing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

/// Header lines starting with this prefix carry wall-clock time and are not
/// part of any digest.
pub const TIMESTAMP_PREFIX: &str = "# created_unix=";

pub const TOOL: &str = concat!("tension ", env!("CARGO_PKG_VERSION"));

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to reproduce one command invocation. Paths are stored
/// by file name so that runs in different directories compare equal.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<String>,
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self { command: command.to_string(), config: Vec::new(), inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn config(&mut self, lines: impl IntoIterator<Item = String>) {
        self.config.extend(lines);
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push((file_name(path), sha256_hex(bytes)));
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    /// Manifest text without the timestamp line.
    pub fn body(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("tool={TOOL}\ncommand={}\n", self.command));
        for c in &self.config {
            s.push_str(&format!("config {c}\n"));
        }
        for (name, digest) in &self.inputs {
            s.push_str(&format!("input {name} sha256={digest}\n"));
        }
        for o in &self.outputs {
            s.push_str(&format!("output {o}\n"));
        }
        s
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.body().as_bytes())
    }

    /// `#` lines that open every output file of this run.
    pub fn header(&self) -> Vec<String> {
        let mut h = vec![
            format!("tool={TOOL}"),
            format!("command={}", self.command),
            format!("manifest_sha256={}", self.digest()),
        ];
        h.extend(self.config.iter().cloned());
        h
    }

    pub fn render(&self) -> String {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        format!("{TIMESTAMP_PREFIX}{now}\n{}", self.body())
    }
}

pub fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), String> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp: PathBuf = dir.join(format!(".{}.tmp-{}", file_name(path), std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    res.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        format!("{}: {e}", path.display())
    })
}
