//! Artifact emission: atomic file writes, the timestamp sidecar, and
//! numeric formatting.
//!
//! Result bodies are pure functions of the configuration and master
//! seed — rerunning a config byte-identically reproduces them. Anything
//! time-dependent (creation time, tool version, the exact command) lives
//! in a sidecar `<artifact>.meta.json` next to the artifact, never in the
//! body. Writes go through a temp file in the destination directory plus
//! an atomic rename, so interrupted runs leave no truncated artifacts.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};

/// Format a float with 17 significant digits (16 fractional digits in
/// scientific notation), the minimum that round-trips every f64.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Atomically write `bytes` to `path` (temp file in the same directory,
/// then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".ergodrift-")
        .tempfile_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)
        .and_then(|()| tmp.flush())
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Sidecar path: `out.csv` → `out.csv.meta.json`.
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.as_os_str().to_os_string();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Write the timestamp/provenance sidecar next to an artifact.
pub fn write_sidecar(artifact: &Path, command: &str) -> Result<()> {
    let created_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let meta = serde_json::json!({
        "artifact": artifact.display().to_string(),
        "command": command,
        "created_unix_ms": created_unix_ms,
        "tool": format!("ergodrift {}", env!("CARGO_PKG_VERSION")),
    });
    let body = format!("{}\n", serde_json::to_string_pretty(&meta)?);
    write_atomic(&sidecar_path(artifact), body.as_bytes())
}

/// Emit a deterministic text body: to stdout when `output` is `None`,
/// else atomically to the file plus the sidecar.
pub fn emit_text(output: Option<&Path>, body: &str, command: &str) -> Result<()> {
    match output {
        None => {
            print!("{body}");
            Ok(())
        }
        Some(path) => {
            write_atomic(path, body.as_bytes())?;
            write_sidecar(path, command)
        }
    }
}
