//! Artifact emission: fixed-width float formatting, CSV assembly, hashing.
//!
//! Artifacts must be byte-identical across reruns and worker counts, so all
//! floats go through one formatter and all files through one writer.

use crate::error::Result;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

/// 17 significant digits in scientific notation; round-trips every f64.
pub fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// One CSV line from float fields, no trailing separator.
pub fn csv_line(fields: &[f64]) -> String {
    let mut line = String::new();
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        let _ = write!(line, "{}", g17(*f));
    }
    line
}

/// Assembles a CSV document with `\n` endings.
pub fn csv_document(header: &str, lines: impl IntoIterator<Item = String>) -> String {
    let mut doc = String::from(header);
    doc.push('\n');
    for line in lines {
        doc.push_str(&line);
        doc.push('\n');
    }
    doc
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Writes bytes, creating parent directories as needed.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
