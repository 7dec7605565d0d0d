//! Predictions JSONL: one `{"video_id","scores":[L reals]}` object per line.

use std::path::Path;

use holivid_core::dataset::{target_row, Manifest};
use holivid_core::metrics::PredictionMatrix;
use holivid_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::{read_string, to_jsonl, write_atomic};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionLine {
    pub video_id: String,
    pub scores: Vec<f64>,
}

pub fn parse_predictions(path: &Path, text: &str) -> Result<Vec<PredictionLine>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e))?;
        if let Some(w) = out.first().map(|f: &PredictionLine| f.scores.len()) {
            if p.scores.len() != w {
                return Err(Error::parse(path, i + 1, format!("expected {w} scores, found {}", p.scores.len())));
            }
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionLine>> {
    parse_predictions(path, &read_string(path)?)
}

pub fn save_predictions(path: &Path, lines: &[PredictionLine]) -> Result<()> {
    write_atomic(path, to_jsonl(lines).as_bytes())
}

/// Rows of a `(N, L)` score tensor paired with their video ids.
pub fn prediction_lines(video_ids: &[String], scores: &Tensor) -> Vec<PredictionLine> {
    let l = scores.dim(1);
    video_ids
        .iter()
        .zip(scores.data().chunks(l.max(1)))
        .map(|(id, row)| PredictionLine {
            video_id: id.clone(),
            scores: row.to_vec(),
        })
        .collect()
}

/// Joins predictions with the manifest's label sets.
pub fn prediction_matrix(
    path: &Path,
    lines: &[PredictionLine],
    manifest: &Manifest,
    n_labels: usize,
) -> Result<PredictionMatrix> {
    let mut ids = Vec::with_capacity(lines.len());
    let mut scores = Vec::with_capacity(lines.len() * n_labels);
    let mut rel = Vec::with_capacity(lines.len() * n_labels);
    for (i, p) in lines.iter().enumerate() {
        if p.scores.len() != n_labels {
            return Err(Error::format(
                path,
                format!("{} has {} scores but the taxonomy has {n_labels} labels", p.video_id, p.scores.len()),
            ));
        }
        let record = manifest
            .get(&p.video_id)
            .ok_or_else(|| Error::format(path, format!("entry {}: video {:?} is not in the manifest", i + 1, p.video_id)))?;
        if let Some(&bad) = record.labels.iter().find(|&&l| l >= n_labels) {
            return Err(holivid_core::Error::DanglingLabel {
                video_id: record.video_id.clone(),
                label: bad,
            }
            .into());
        }
        ids.push(p.video_id.clone());
        scores.extend_from_slice(&p.scores);
        rel.extend(target_row(&record.labels, n_labels));
    }
    let n = ids.len();
    Ok(PredictionMatrix::new(
        ids,
        Tensor::from_vec(&[n, n_labels], scores)?,
        Tensor::from_vec(&[n, n_labels], rel)?,
    )?)
}
