//! Dataset directories and the clip sources behind them.
//!
//! A dataset directory holds `spec.json` (the synthetic corpus definition
//! that renders every clip), `taxonomy.csv` and `manifest.jsonl`. Pruning
//! rewrites the last two; clips are still rendered from the original spec
//! by video id, so a pruned directory keeps working.

use std::path::{Path, PathBuf};

use holivid_core::dataset::{AnnotationRecord, ClipSource, Manifest, Split, SyntheticCorpus, SyntheticSpec};
use holivid_core::taxonomy::Taxonomy;
use holivid_core::Tensor;

use crate::config::DataSection;
use crate::error::{Error, Result};
use crate::io::manifest::{load_manifest, save_manifest};
use crate::io::taxonomy::{fingerprint, load_taxonomy, save_taxonomy, taxonomy_csv};
use crate::io::{read_string, to_sorted_json, write_atomic};

pub const SPEC_FILE: &str = "spec.json";
pub const TAXONOMY_FILE: &str = "taxonomy.csv";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Annotations plus a way to render clips.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub taxonomy: Taxonomy,
    /// SHA-256 of the taxonomy CSV bytes.
    pub fingerprint: String,
    pub manifest: Manifest,
    pub corpus: SyntheticCorpus,
}

impl Dataset {
    pub fn synthetic(spec: SyntheticSpec) -> Result<Self> {
        let corpus = SyntheticCorpus::new(spec)?;
        Ok(Self {
            taxonomy: corpus.taxonomy().clone(),
            fingerprint: fingerprint(taxonomy_csv(corpus.taxonomy()).as_bytes()),
            manifest: corpus.manifest().clone(),
            corpus,
        })
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let spec_path = dir.join(SPEC_FILE);
        let spec: SyntheticSpec = serde_json::from_str(&read_string(&spec_path)?)
            .map_err(|e| Error::format(&spec_path, e))?;
        let corpus = SyntheticCorpus::new(spec)?;
        let tax_path = dir.join(TAXONOMY_FILE);
        let loaded = load_taxonomy(&tax_path)?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = load_manifest(&manifest_path)?;
        loaded
            .taxonomy
            .check_manifest(&manifest)
            .map_err(|e| Error::format(&manifest_path, e))?;
        for r in manifest.records() {
            if corpus.manifest().get(&r.video_id).is_none() {
                return Err(Error::format(
                    &manifest_path,
                    format!("video `{}` is not part of the corpus described by {SPEC_FILE}", r.video_id),
                ));
            }
        }
        Ok(Self {
            taxonomy: loaded.taxonomy,
            fingerprint: loaded.fingerprint,
            manifest,
            corpus,
        })
    }

    pub fn from_section(section: &DataSection) -> Result<Self> {
        match section {
            DataSection::Synthetic(spec) => Self::synthetic(spec.clone()),
            DataSection::Dir(dir) => Self::load_dir(dir),
        }
    }

    /// Writes the three dataset files into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(SPEC_FILE), to_sorted_json(self.corpus.spec()).as_bytes())?;
        save_taxonomy(&dir.join(TAXONOMY_FILE), &self.taxonomy)?;
        save_manifest(&dir.join(MANIFEST_FILE), &self.manifest)
    }

    pub fn split(&self, split: Split) -> Vec<&AnnotationRecord> {
        self.manifest.split(split)
    }

    pub fn frames(&self) -> usize {
        self.corpus.spec().frames
    }

    pub fn input_size(&self) -> usize {
        self.corpus.spec().height
    }
}

impl ClipSource for Dataset {
    fn clip(&self, video_id: &str) -> holivid_core::Result<Tensor> {
        self.corpus.render(video_id)
    }
}

/// `<dir>/<video_id>.bin` for every clip export.
pub fn clip_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.bin"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use holivid_core::taxonomy::prune_by_min_samples;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_train: 12,
            n_val: 4,
            n_test: 4,
            seed: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::synthetic(small()).unwrap();
        d.save_dir(dir.path()).unwrap();
        let back = Dataset::load_dir(dir.path()).unwrap();
        assert_eq!(back.taxonomy, d.taxonomy);
        assert_eq!(back.manifest, d.manifest);
        assert_eq!(back.fingerprint, d.fingerprint);
        assert_eq!(back.clip("val-00001").unwrap(), d.clip("val-00001").unwrap());
    }

    #[test]
    fn pruned_directory_still_renders() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = Dataset::synthetic(small()).unwrap();
        let (tax, manifest) = prune_by_min_samples(&d.taxonomy, &d.manifest, 3).unwrap();
        assert!(tax.len() <= d.taxonomy.len());
        d.taxonomy = tax;
        d.manifest = manifest;
        d.save_dir(dir.path()).unwrap();
        let back = Dataset::load_dir(dir.path()).unwrap();
        let id = &back.manifest.records()[0].video_id;
        assert_eq!(back.clip(id).unwrap().shape(), &[3, 8, 32, 32]);
    }

    #[test]
    fn foreign_videos_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::synthetic(small()).unwrap();
        d.save_dir(dir.path()).unwrap();
        let bigger = Dataset::synthetic(SyntheticSpec { n_train: 20, ..small() }).unwrap();
        save_manifest(&dir.path().join(MANIFEST_FILE), &bigger.manifest).unwrap();
        assert!(matches!(Dataset::load_dir(dir.path()), Err(Error::Format { .. })));
    }
}
