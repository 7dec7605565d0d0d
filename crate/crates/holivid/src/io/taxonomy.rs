//! Taxonomy CSV: header `label_id,name,category`, one label per row.

use std::path::Path;

use holivid_core::taxonomy::{RawRow, Taxonomy};
use sha2::{Digest, Sha256};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};

const HEADER: [&str; 3] = ["label_id", "name", "category"];

/// A loaded taxonomy together with the SHA-256 of the file it came from.
#[derive(Debug, Clone)]
pub struct LoadedTaxonomy {
    pub taxonomy: Taxonomy,
    pub fingerprint: String,
}

pub fn fingerprint(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn parse_taxonomy(path: &Path, bytes: &[u8]) -> Result<Taxonomy> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader.headers().map_err(|e| Error::parse(path, 1, e))?.clone();
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(Error::parse(
            path,
            1,
            format!("expected header `label_id,name,category`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let id = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::parse(path, line, format!("label_id `{}` is not a non-negative integer", &record[0])))?;
        rows.push(RawRow {
            row: line,
            id,
            name: record[1].to_string(),
            category: record[2].trim().to_string(),
        });
    }
    Taxonomy::from_rows(rows).map_err(|e| Error::format(path, e))
}

pub fn load_taxonomy(path: &Path) -> Result<LoadedTaxonomy> {
    let bytes = read_bytes(path)?;
    Ok(LoadedTaxonomy {
        taxonomy: parse_taxonomy(path, &bytes)?,
        fingerprint: fingerprint(&bytes),
    })
}

pub fn taxonomy_csv(taxonomy: &Taxonomy) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for l in taxonomy.labels() {
        w.write_record([l.id.to_string().as_str(), l.name.as_str(), l.category.as_str()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 csv")
}

/// Writes the CSV and returns its fingerprint.
pub fn save_taxonomy(path: &Path, taxonomy: &Taxonomy) -> Result<String> {
    let text = taxonomy_csv(taxonomy);
    write_atomic(path, text.as_bytes())?;
    Ok(fingerprint(text.as_bytes()))
}
