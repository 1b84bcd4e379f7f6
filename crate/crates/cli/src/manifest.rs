//! Output files: a `#`-prefixed run manifest followed by a CSV body.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

/// Default output directory when `--out` is not given.
pub const OUT_DIR_ENV: &str = "PNC_ARQ_OUT_DIR";

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    /// Effective configuration as `key=value` pairs, in flag order.
    pub config: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub outputs: Vec<PathBuf>,
    pub duration: Duration,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: Vec::new(),
            seed: None,
            outputs: Vec::new(),
            duration: Duration::ZERO,
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.config.push((key.to_string(), value.to_string()));
        self
    }

    pub fn header(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# command: {}\n", self.command));
        s.push_str(&format!("# version: {}\n", env!("CARGO_PKG_VERSION")));
        if let Some(seed) = self.seed {
            s.push_str(&format!("# seed: {seed} (0x{seed:x})\n"));
        }
        for (k, v) in &self.config {
            s.push_str(&format!("# {k}: {v}\n"));
        }
        let outs: Vec<String> = self.outputs.iter().map(|p| p.display().to_string()).collect();
        s.push_str(&format!("# outputs: {}\n", outs.join(" ")));
        s.push_str(&format!("# duration_s: {:.3}\n", self.duration.as_secs_f64()));
        s
    }
}

/// Resolves the CSV path: `--out` wins, then `$PNC_ARQ_OUT_DIR/<default_name>`.
pub fn output_path(out: Option<&Path>, default_name: &str) -> Option<PathBuf> {
    if let Some(p) = out {
        return Some(p.to_path_buf());
    }
    std::env::var_os(OUT_DIR_ENV)
        .filter(|d| !d.is_empty())
        .map(|d| PathBuf::from(d).join(default_name))
}

/// Writes manifest, column header and rows, replacing any existing file.
pub fn write_csv(path: &Path, manifest: &RunManifest, columns: &str, rows: &[String]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut body = manifest.header();
    body.push_str(columns);
    body.push('\n');
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    fs::write(path, body)
}

/// Appends rows to an existing CSV with the same columns, preceded by the
/// new run's manifest. Falls back to [`write_csv`] for a new or foreign file.
pub fn append_csv(path: &Path, manifest: &RunManifest, columns: &str, rows: &[String]) -> std::io::Result<()> {
    let same_schema = fs::read_to_string(path)
        .map(|t| t.lines().any(|l| l == columns))
        .unwrap_or(false);
    if !same_schema {
        return write_csv(path, manifest, columns, rows);
    }
    let mut f = OpenOptions::new().append(true).open(path)?;
    let mut body = manifest.header();
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    f.write_all(body.as_bytes())
}
