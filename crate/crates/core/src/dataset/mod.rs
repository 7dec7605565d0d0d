//! Annotation manifests, the synthetic appearance/motion corpus and batching.

mod batch;
mod synthetic;

pub use batch::{batch_iter, batch_order, target_row, Batch, BatchIter, ClipCache, ClipSource};
pub use synthetic::{generate_synthetic, render_clip, SyntheticCorpus, SyntheticSpec, TEMPLATE_CELL};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One video's multi-label annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub split: Split,
    /// Sorted, duplicate-free label ids.
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidences: Option<BTreeMap<usize, f64>>,
}

impl AnnotationRecord {
    fn normalise(mut self) -> Result<Self> {
        self.labels.sort_unstable();
        self.labels.dedup();
        if self.labels.is_empty() {
            return Err(Error::EmptyLabelSet {
                video_id: self.video_id,
            });
        }
        if let Some(conf) = &self.confidences {
            if let Some(&v) = conf.values().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::ConfidenceRange(v));
            }
            if !conf.keys().copied().eq(self.labels.iter().copied()) {
                return Err(Error::ConfidenceMismatch {
                    video_id: self.video_id,
                });
            }
        }
        Ok(self)
    }
}

/// Records with unique video ids, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    records: Vec<AnnotationRecord>,
    index: BTreeMap<String, usize>,
}

impl Manifest {
    pub fn new(records: Vec<AnnotationRecord>) -> Result<Self> {
        let mut m = Manifest::default();
        for r in records {
            m.push(r)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, record: AnnotationRecord) -> Result<()> {
        let record = record.normalise()?;
        if self.index.contains_key(&record.video_id) {
            return Err(Error::DuplicateVideoId(record.video_id));
        }
        self.index.insert(record.video_id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, video_id: &str) -> Option<&AnnotationRecord> {
        self.index.get(video_id).map(|&i| &self.records[i])
    }

    /// Records of one split, in manifest order.
    pub fn split(&self, split: Split) -> Vec<&AnnotationRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Keeps only the records for which `keep` holds.
    pub fn filtered(&self, mut keep: impl FnMut(&AnnotationRecord) -> bool) -> Manifest {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Manifest::new(records).expect("a subset of a valid manifest is valid")
    }

    /// Distinct label ids referenced anywhere.
    pub fn label_ids(&self) -> BTreeSet<usize> {
        self.records.iter().flat_map(|r| r.labels.iter().copied()).collect()
    }
}
