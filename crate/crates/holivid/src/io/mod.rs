//! On-disk formats.

pub mod checkpoint;
pub mod manifest;
pub mod predictions;
pub mod taxonomy;
pub mod tensor;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temporary file and renames it into place, so a
/// reader never observes a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    let mut f = fs::File::create(tmp).map_err(|e| Error::io(tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(tmp, e))?;
    drop(f);
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}

/// Serialises one value per line.
pub fn to_jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("serialisable record"));
        out.push('\n');
    }
    out
}

/// JSON with object keys sorted and a trailing newline.
pub fn to_sorted_json<T: serde::Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serialisable value");
    let mut s = serde_json::to_string_pretty(&v).expect("serialisable value");
    s.push('\n');
    s
}
