use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{AnnotationRecord, SyntheticCorpus};
use crate::error::{Error, Result};
use crate::rng::{permutation, rng};
use crate::tensor::Tensor;

/// Anything that can produce the `(3, T, H, W)` clip for a video id.
pub trait ClipSource {
    fn clip(&self, video_id: &str) -> Result<Tensor>;
}

impl ClipSource for SyntheticCorpus {
    fn clip(&self, video_id: &str) -> Result<Tensor> {
        self.render(video_id)
    }
}

/// Pre-rendered clips held in memory.
#[derive(Debug, Clone, Default)]
pub struct ClipCache {
    clips: BTreeMap<String, Tensor>,
}

impl ClipCache {
    pub fn new(clips: BTreeMap<String, Tensor>) -> Self {
        Self { clips }
    }

    pub fn insert(&mut self, video_id: String, clip: Tensor) {
        self.clips.insert(video_id, clip);
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

impl ClipSource for ClipCache {
    fn clip(&self, video_id: &str) -> Result<Tensor> {
        self.clips
            .get(video_id)
            .cloned()
            .ok_or_else(|| Error::UnknownVideo(video_id.into()))
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub video_ids: Vec<String>,
    /// `(B, 3, T, H, W)`
    pub clips: Tensor,
    /// `(B, L)` with entries in {0, 1}
    pub targets: Tensor,
}

/// Multi-hot row for a label set.
pub fn target_row(labels: &[usize], n_labels: usize) -> Vec<f64> {
    let mut row = vec![0.0; n_labels];
    for &l in labels {
        row[l] = 1.0;
    }
    row
}

/// Visiting order: a seeded permutation, or manifest order for `None`.
pub fn batch_order(n: usize, shuffle_seed: Option<u64>) -> Vec<usize> {
    match shuffle_seed {
        Some(seed) => permutation(&mut rng(seed), n),
        None => (0..n).collect(),
    }
}

pub struct BatchIter<'a, S: ClipSource + ?Sized> {
    records: Vec<&'a AnnotationRecord>,
    source: &'a S,
    n_labels: usize,
    batch_size: usize,
    order: Vec<usize>,
    pos: usize,
}

/// Yields batches over `records`; the final batch may be partial.
pub fn batch_iter<'a, S: ClipSource + ?Sized>(
    records: Vec<&'a AnnotationRecord>,
    source: &'a S,
    n_labels: usize,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> BatchIter<'a, S> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let order = batch_order(records.len(), shuffle_seed);
    BatchIter {
        records,
        source,
        n_labels,
        batch_size,
        order,
        pos: 0,
    }
}

impl<S: ClipSource + ?Sized> Iterator for BatchIter<'_, S> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let build = || -> Result<Batch> {
            let mut clips = Vec::with_capacity(idx.len());
            let mut targets = Vec::with_capacity(idx.len() * self.n_labels);
            let mut video_ids = Vec::with_capacity(idx.len());
            for &i in idx {
                let r = self.records[i];
                clips.push(self.source.clip(&r.video_id)?);
                targets.extend(target_row(&r.labels, self.n_labels));
                video_ids.push(r.video_id.clone());
            }
            let refs: Vec<&Tensor> = clips.iter().collect();
            Ok(Batch {
                video_ids,
                clips: Tensor::stack(&refs)?,
                targets: Tensor::from_vec(&[idx.len(), self.n_labels], targets)?,
            })
        };
        Some(build())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Split, SyntheticSpec};

    fn corpus() -> SyntheticCorpus {
        SyntheticCorpus::new(SyntheticSpec {
            n_train: 5,
            n_val: 0,
            n_test: 0,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn partial_final_batch() {
        let c = corpus();
        let sizes: Vec<usize> = batch_iter(c.manifest().split(Split::Train), &c, 8, 2, Some(1))
            .map(|b| b.unwrap().clips.dim(0))
            .collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn same_seed_same_order() {
        let c = corpus();
        let ids = |seed| -> Vec<String> {
            batch_iter(c.manifest().split(Split::Train), &c, 8, 2, Some(seed))
                .flat_map(|b| b.unwrap().video_ids)
                .collect()
        };
        assert_eq!(ids(3), ids(3));
        let mut sorted = ids(3);
        sorted.sort();
        assert_eq!(sorted.len(), 5);
        sorted.dedup();
        assert_eq!(sorted.len(), 5);
    }

    #[test]
    fn targets_are_multi_hot() {
        assert_eq!(target_row(&[0, 3], 5), vec![1.0, 0.0, 0.0, 1.0, 0.0]);
        let c = corpus();
        for b in batch_iter(c.manifest().split(Split::Train), &c, 8, 3, None) {
            let b = b.unwrap();
            for row in b.targets.data().chunks(8) {
                assert!(row.iter().all(|&v| v == 0.0 || v == 1.0));
                assert!(row.contains(&1.0));
            }
        }
    }
}
