//! The label space: six semantic categories, the dataset-construction
//! filters (machine-tag confidence, per-video tag cap, minimum samples per
//! label) and the per-category statistics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationRecord, Manifest, Split};
use crate::error::{Error, Result};

/// Per-category label counts of the full-size benchmark taxonomy
/// (scene, object, action, event, attribute, concept).
pub const HVU_LABEL_COUNTS: [usize; 6] = [248, 1678, 739, 69, 117, 291];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Scene,
    Object,
    Action,
    Event,
    Attribute,
    Concept,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Scene,
        Category::Object,
        Category::Action,
        Category::Event,
        Category::Attribute,
        Category::Concept,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Scene => "scene",
            Category::Object => "object",
            Category::Action => "action",
            Category::Event => "event",
            Category::Attribute => "attribute",
            Category::Concept => "concept",
        }
    }

    /// Position in [`Category::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ();

    fn from_str(s: &str) -> core::result::Result<Self, ()> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: usize,
    pub name: String,
    pub category: Category,
}

/// One unparsed taxonomy row; `row` is the source line number used in errors.
#[derive(Debug, Clone)]
pub struct RawRow {
    pub row: usize,
    pub id: usize,
    pub name: String,
    pub category: String,
}

/// Labels with contiguous ids `0..L`, each in exactly one category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    labels: Vec<Label>,
}

impl Taxonomy {
    /// Validates and sorts `labels` by id. Errors refer to 1-based positions
    /// in the input order.
    pub fn new(labels: Vec<Label>) -> Result<Self> {
        let rows = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .collect();
        Self::from_numbered(rows)
    }

    pub fn from_rows(rows: impl IntoIterator<Item = RawRow>) -> Result<Self> {
        let mut numbered = Vec::new();
        for r in rows {
            let category = r.category.parse().map_err(|_| Error::UnknownCategory {
                row: r.row,
                value: r.category.clone(),
            })?;
            numbered.push((
                r.row,
                Label {
                    id: r.id,
                    name: r.name,
                    category,
                },
            ));
        }
        Self::from_numbered(numbered)
    }

    fn from_numbered(mut rows: Vec<(usize, Label)>) -> Result<Self> {
        rows.sort_by(|a, b| a.1.id.cmp(&b.1.id).then(a.0.cmp(&b.0)));
        for pair in rows.windows(2) {
            if pair[0].1.id == pair[1].1.id {
                return Err(Error::DuplicateLabelId {
                    row: pair[1].0,
                    id: pair[1].1.id,
                });
            }
        }
        for (expected, (row, label)) in rows.iter().enumerate() {
            if label.id != expected {
                return Err(Error::NonContiguousIds {
                    row: *row,
                    expected,
                    found: label.id,
                });
            }
        }
        let mut seen = BTreeMap::new();
        for (row, label) in &rows {
            if seen.insert((label.category, label.name.as_str()), *row).is_some() {
                return Err(Error::DuplicateLabelName {
                    row: *row,
                    name: label.name.clone(),
                    category: label.category.as_str(),
                });
            }
        }
        Ok(Self {
            labels: rows.into_iter().map(|(_, l)| l).collect(),
        })
    }

    /// A taxonomy with the given number of labels per category, ids
    /// assigned category by category in [`Category::ALL`] order.
    pub fn with_counts(counts: [usize; 6]) -> Self {
        let mut labels = Vec::new();
        for (cat, &n) in Category::ALL.iter().zip(&counts) {
            for i in 0..n {
                labels.push(Label {
                    id: labels.len(),
                    name: format!("{}-{:04}", cat.as_str(), i),
                    category: *cat,
                });
            }
        }
        Self { labels }
    }

    /// The full-size benchmark shape: 3142 labels.
    pub fn hvu_sized() -> Self {
        Self::with_counts(HVU_LABEL_COUNTS)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, id: usize) -> Option<&Label> {
        self.labels.get(id)
    }

    pub fn category_of(&self, id: usize) -> Option<Category> {
        self.labels.get(id).map(|l| l.category)
    }

    /// Ids of the labels in `category`, ascending.
    pub fn ids_in(&self, category: Category) -> Vec<usize> {
        self.labels
            .iter()
            .filter(|l| l.category == category)
            .map(|l| l.id)
            .collect()
    }

    pub fn counts(&self) -> [usize; 6] {
        let mut c = [0; 6];
        for l in &self.labels {
            c[l.category.index()] += 1;
        }
        c
    }

    /// Category of every label, in id order.
    pub fn categories(&self) -> Vec<Category> {
        self.labels.iter().map(|l| l.category).collect()
    }

    pub fn check_manifest(&self, manifest: &Manifest) -> Result<()> {
        for r in manifest.records() {
            if let Some(&bad) = r.labels.iter().find(|&&id| id >= self.len()) {
                return Err(Error::DanglingLabel {
                    video_id: r.video_id.clone(),
                    label: bad,
                });
            }
        }
        Ok(())
    }
}

/// A tag predicted by an automatic tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTag {
    pub name: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawTagList {
    pub tags: Vec<RawTag>,
}

impl RawTagList {
    pub fn new(tags: Vec<RawTag>) -> Result<Self> {
        if let Some(t) = tags.iter().find(|t| !(0.0..=1.0).contains(&t.confidence)) {
            return Err(Error::ConfidenceRange(t.confidence));
        }
        Ok(Self { tags })
    }
}

/// Keeps tags with `confidence >= threshold`, ordered by descending
/// confidence then ascending name, and truncated to `max_tags`.
pub fn filter_machine_tags(raw: &RawTagList, threshold: f64, max_tags: usize) -> RawTagList {
    debug_assert!((0.0..=1.0).contains(&threshold));
    let mut kept: Vec<RawTag> = raw
        .tags
        .iter()
        .filter(|t| t.confidence >= threshold)
        .cloned()
        .collect();
    kept.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    kept.truncate(max_tags);
    RawTagList { tags: kept }
}

/// Number of train-split videos carrying each label.
pub fn train_counts(tax: &Taxonomy, manifest: &Manifest) -> Result<Vec<usize>> {
    tax.check_manifest(manifest)?;
    let mut counts = vec![0; tax.len()];
    for r in manifest.records().iter().filter(|r| r.split == Split::Train) {
        for &id in &r.labels {
            counts[id] += 1;
        }
    }
    Ok(counts)
}

/// Removes labels seen in fewer than `min_samples` training videos and
/// reindexes the survivors contiguously in their original order. Records
/// left without any label are dropped.
pub fn prune_by_min_samples(
    tax: &Taxonomy,
    manifest: &Manifest,
    min_samples: usize,
) -> Result<(Taxonomy, Manifest)> {
    let counts = train_counts(tax, manifest)?;
    let mut remap = vec![None; tax.len()];
    let mut labels = Vec::new();
    for l in tax.labels() {
        if counts[l.id] >= min_samples {
            remap[l.id] = Some(labels.len());
            labels.push(Label {
                id: labels.len(),
                name: l.name.clone(),
                category: l.category,
            });
        }
    }
    let mut records = Vec::new();
    for r in manifest.records() {
        let new_labels: Vec<usize> = r.labels.iter().filter_map(|&id| remap[id]).collect();
        if new_labels.is_empty() {
            continue;
        }
        let confidences = r.confidences.as_ref().map(|c| {
            c.iter()
                .filter_map(|(&id, &v)| remap[id].map(|n| (n, v)))
                .collect()
        });
        records.push(AnnotationRecord {
            video_id: r.video_id.clone(),
            split: r.split,
            labels: new_labels,
            confidences,
        });
    }
    Ok((Taxonomy { labels }, Manifest::new(records)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub label_count: usize,
    pub annotation_count: usize,
    pub video_count: usize,
    /// `annotation_count / label_count`, or 0 when the category has no labels.
    pub annotations_per_label: f64,
}

impl CategoryCounts {
    pub fn new(label_count: usize, annotation_count: usize, video_count: usize) -> Self {
        let annotations_per_label = if label_count > 0 {
            annotation_count as f64 / label_count as f64
        } else {
            0.0
        };
        Self {
            label_count,
            annotation_count,
            video_count,
            annotations_per_label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub per_category: [CategoryCounts; 6],
    pub total_labels: usize,
    pub total_annotations: usize,
    pub total_videos: usize,
    /// Total annotations over total labels.
    pub annotations_per_label: f64,
}

impl CategoryStats {
    pub fn get(&self, c: Category) -> &CategoryCounts {
        &self.per_category[c.index()]
    }
}

pub fn category_stats(tax: &Taxonomy, manifest: &Manifest) -> Result<CategoryStats> {
    tax.check_manifest(manifest)?;
    let labels = tax.counts();
    let mut annotations = [0usize; 6];
    let mut videos = [0usize; 6];
    for r in manifest.records() {
        let mut present = [false; 6];
        for &id in &r.labels {
            let c = tax.labels[id].category.index();
            annotations[c] += 1;
            present[c] = true;
        }
        for (v, p) in videos.iter_mut().zip(present) {
            *v += p as usize;
        }
    }
    let per_category = core::array::from_fn(|i| CategoryCounts::new(labels[i], annotations[i], videos[i]));
    let total_annotations = annotations.iter().sum();
    Ok(CategoryStats {
        per_category,
        total_labels: tax.len(),
        total_annotations,
        total_videos: manifest.len(),
        annotations_per_label: if tax.is_empty() {
            0.0
        } else {
            total_annotations as f64 / tax.len() as f64
        },
    })
}

/// A subset of the six categories, as a bit set in [`Category::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct CategorySet(u8);

impl CategorySet {
    pub const ALL: CategorySet = CategorySet(0b11_1111);

    pub fn insert(&mut self, c: Category) {
        self.0 |= 1 << c.index();
    }

    pub fn contains(self, c: Category) -> bool {
        self.0 & (1 << c.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Category> {
        Category::ALL.into_iter().filter(move |&c| self.contains(c))
    }
}

impl FromIterator<Category> for CategorySet {
    fn from_iter<I: IntoIterator<Item = Category>>(iter: I) -> Self {
        let mut s = CategorySet::default();
        for c in iter {
            s.insert(c);
        }
        s
    }
}

impl fmt::Display for CategorySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for c in self.iter() {
            if !first {
                f.write_str("+")?;
            }
            f.write_str(c.as_str())?;
            first = false;
        }
        Ok(())
    }
}

/// Fraction of videos whose labels cover exactly each category subset.
pub fn coverage_partition(tax: &Taxonomy, manifest: &Manifest) -> Result<BTreeMap<CategorySet, f64>> {
    if manifest.is_empty() {
        return Err(Error::NoVideos);
    }
    tax.check_manifest(manifest)?;
    let mut counts: BTreeMap<CategorySet, usize> = BTreeMap::new();
    for r in manifest.records() {
        let set: CategorySet = r.labels.iter().map(|&id| tax.labels[id].category).collect();
        *counts.entry(set).or_default() += 1;
    }
    let n = manifest.len() as f64;
    Ok(counts.into_iter().map(|(k, v)| (k, v as f64 / n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn tag(name: &str, confidence: f64) -> RawTag {
        RawTag {
            name: name.to_string(),
            confidence,
        }
    }

    fn rec(id: &str, split: Split, labels: &[usize]) -> AnnotationRecord {
        AnnotationRecord {
            video_id: id.to_string(),
            split,
            labels: labels.to_vec(),
            confidences: None,
        }
    }

    fn row(row: usize, id: usize, name: &str, category: &str) -> RawRow {
        RawRow {
            row,
            id,
            name: name.to_string(),
            category: category.to_string(),
        }
    }

    #[test]
    fn rows_in_any_order_are_sorted() {
        let t = Taxonomy::from_rows([row(2, 1, "running", "action"), row(3, 0, "beach", "scene")]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.labels()[0].name, "beach");
        assert_eq!(t.category_of(1), Some(Category::Action));
    }

    #[test]
    fn duplicate_id_names_the_row() {
        let err = Taxonomy::from_rows([row(2, 0, "beach", "scene"), row(3, 0, "sea", "scene")]).unwrap_err();
        assert_eq!(err, Error::DuplicateLabelId { row: 3, id: 0 });
        assert!(err.to_string().contains("duplicate label_id 0"));
    }

    #[test]
    fn unknown_category_and_gaps_are_rejected() {
        assert_eq!(
            Taxonomy::from_rows([row(2, 0, "x", "emotion")]).unwrap_err(),
            Error::UnknownCategory {
                row: 2,
                value: "emotion".to_string()
            }
        );
        assert!(matches!(
            Taxonomy::from_rows([row(2, 0, "a", "scene"), row(3, 2, "b", "scene")]),
            Err(Error::NonContiguousIds { row: 3, expected: 1, found: 2 })
        ));
        assert!(matches!(
            Taxonomy::from_rows([row(2, 0, "a", "scene"), row(3, 1, "a", "scene")]),
            Err(Error::DuplicateLabelName { row: 3, .. })
        ));
        // Same name in different categories is fine.
        assert!(Taxonomy::from_rows([row(2, 0, "a", "scene"), row(3, 1, "a", "object")]).is_ok());
    }

    #[test]
    fn hvu_sized_taxonomy_has_3142_labels() {
        let t = Taxonomy::hvu_sized();
        assert_eq!(t.len(), 3142);
        assert_eq!(t.counts(), HVU_LABEL_COUNTS);
    }

    #[test]
    fn tag_filter_threshold_and_order() {
        let raw = RawTagList::new(vec![tag("dog", 0.95), tag("ball", 0.31), tag("sea", 0.29)]).unwrap();
        let out = filter_machine_tags(&raw, 0.30, 30);
        assert_eq!(out.tags, vec![tag("dog", 0.95), tag("ball", 0.31)]);
        assert!(filter_machine_tags(&RawTagList::default(), 0.3, 30).tags.is_empty());
    }

    #[test]
    fn tag_filter_caps_with_name_tie_break() {
        let tags: Vec<_> = (0..40).rev().map(|i| tag(&format!("t{i:02}"), 0.9)).collect();
        let out = filter_machine_tags(&RawTagList::new(tags).unwrap(), 0.3, 30);
        let names: Vec<_> = out.tags.iter().map(|t| t.name.clone()).collect();
        let expected: Vec<_> = (0..30).map(|i| format!("t{i:02}")).collect();
        assert_eq!(names, expected);
    }

    #[test]
    fn out_of_range_confidence_is_rejected() {
        assert!(RawTagList::new(vec![tag("x", 1.2)]).is_err());
    }

    fn counted_manifest(counts: &[usize]) -> (Taxonomy, Manifest) {
        let tax = Taxonomy::with_counts([counts.len(), 0, 0, 0, 0, 0]);
        let mut records = Vec::new();
        let max = *counts.iter().max().unwrap();
        for v in 0..max {
            let labels: Vec<usize> = (0..counts.len()).filter(|&l| v < counts[l]).collect();
            records.push(rec(&format!("v{v}"), Split::Train, &labels));
        }
        records.push(rec("val0", Split::Val, &[0]));
        (tax, Manifest::new(records).unwrap())
    }

    #[test]
    fn prune_boundary_is_inclusive() {
        let (tax, m) = counted_manifest(&[49, 50, 60]);
        let (t2, m2) = prune_by_min_samples(&tax, &m, 50).unwrap();
        assert_eq!(t2.len(), 2);
        assert_eq!(t2.labels()[0].name, "scene-0001");
        assert_eq!(t2.labels()[1].id, 1);
        // The val record only carried the pruned label and disappears.
        assert!(m2.get("val0").is_none());
        assert_eq!(train_counts(&t2, &m2).unwrap(), vec![50, 60]);
    }

    #[test]
    fn prune_is_identity_when_nothing_falls_below() {
        let (tax, m) = counted_manifest(&[55, 50, 60]);
        let (t2, m2) = prune_by_min_samples(&tax, &m, 50).unwrap();
        assert_eq!(t2, tax);
        assert_eq!(m2, m);
    }

    #[test]
    fn prune_rejects_dangling_ids() {
        let tax = Taxonomy::with_counts([1, 0, 0, 0, 0, 0]);
        let m = Manifest::new(vec![rec("a", Split::Train, &[3])]).unwrap();
        assert!(matches!(
            prune_by_min_samples(&tax, &m, 1),
            Err(Error::DanglingLabel { label: 3, .. })
        ));
    }

    #[test]
    fn stats_count_pairs_and_videos() {
        let tax = Taxonomy::new(vec![
            Label { id: 0, name: "beach".into(), category: Category::Scene },
            Label { id: 1, name: "run".into(), category: Category::Action },
        ])
        .unwrap();
        let m = Manifest::new(vec![rec("v1", Split::Train, &[0]), rec("v2", Split::Train, &[0, 1])]).unwrap();
        let s = category_stats(&tax, &m).unwrap();
        assert_eq!(*s.get(Category::Scene), CategoryCounts::new(1, 2, 2));
        assert_eq!(*s.get(Category::Action), CategoryCounts::new(1, 1, 1));
        assert_eq!(s.total_annotations, 3);
        let empty = category_stats(&tax, &Manifest::default()).unwrap();
        assert!(empty.per_category.iter().all(|c| c.annotation_count == 0 && c.video_count == 0));
    }

    #[test]
    fn annotations_per_label_from_table_values() {
        let c = CategoryCounts::new(248, 672_622, 0);
        assert!((c.annotations_per_label - 2712.2).abs() < 0.05);
    }

    #[test]
    fn coverage_fractions() {
        let tax = Taxonomy::with_counts([1, 1, 1, 1, 1, 1]);
        let m = Manifest::new(vec![
            rec("a", Split::Train, &[0, 2]),
            rec("b", Split::Train, &[2]),
            rec("c", Split::Train, &[0, 2]),
            rec("d", Split::Train, &[0, 1, 2, 3, 4, 5]),
        ])
        .unwrap();
        let cov = coverage_partition(&tax, &m).unwrap();
        let sa: CategorySet = [Category::Scene, Category::Action].into_iter().collect();
        let a: CategorySet = [Category::Action].into_iter().collect();
        assert_eq!(cov[&sa], 0.5);
        assert_eq!(cov[&a], 0.25);
        assert_eq!(cov[&CategorySet::ALL], 0.25);
        assert_eq!(sa.to_string(), "scene+action");
        assert_eq!(coverage_partition(&tax, &Manifest::default()), Err(Error::NoVideos));
    }
}
