//! Manifest JSONL: one `{"video_id","split","labels",["confidences"]}` object per line.

use std::path::Path;

use holivid_core::dataset::{AnnotationRecord, Manifest};

use super::{read_string, to_jsonl, write_atomic};
use crate::error::{Error, Result};

/// Parses a manifest, reporting the 1-based line of the first bad record.
/// Blank lines are skipped.
pub fn parse_manifest(path: &Path, text: &str) -> Result<Manifest> {
    let mut manifest = Manifest::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e))?;
        manifest.push(record).map_err(|e| Error::parse(path, i + 1, e))?;
    }
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    parse_manifest(path, &read_string(path)?)
}

pub fn manifest_jsonl(manifest: &Manifest) -> String {
    to_jsonl(manifest.records())
}

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_atomic(path, manifest_jsonl(manifest).as_bytes())
}
