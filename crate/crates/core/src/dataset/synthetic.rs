//! A seeded corpus whose labels split into appearance cues and motion cues.
//!
//! Static labels are coloured shapes at a label-specific grid cell, drawn
//! identically in every frame, so one frame decides them. A dynamic label
//! is a field of identical white dots that all translate with one
//! label-specific velocity on a torus; start positions are uniform, so
//! every single frame has the same distribution for every dynamic label
//! and only frame pairs tell them apart.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, Manifest, Split};
use crate::error::{Error, Result};
use crate::rng::{hash_str, mix, normal, rng_for};
use crate::taxonomy::{Category, Label, Taxonomy};
use crate::tensor::Tensor;

/// Side of the grid cell reserved for one static template, in pixels.
pub const TEMPLATE_CELL: usize = 8;
const TEMPLATE_MARGIN: usize = 1;
const DOT_SIZE: usize = 2;
const BACKGROUND: f64 = 0.5;

const STATIC_CATEGORIES: [Category; 4] = [
    Category::Scene,
    Category::Object,
    Category::Attribute,
    Category::Concept,
];
const DYNAMIC_CATEGORIES: [Category; 2] = [Category::Action, Category::Event];

const STREAM_LABELS: u64 = 1;
const STREAM_RENDER: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub static_labels: usize,
    pub dynamic_labels: usize,
    /// Inclusive `[min, max]` number of static labels per video.
    pub static_per_video: [usize; 2],
    /// Inclusive `[min, max]` number of dynamic labels per video.
    pub dynamic_per_video: [usize; 2],
    /// Dots drawn for each dynamic label present in a clip.
    pub dots_per_motion: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_train: 64,
            n_val: 32,
            n_test: 32,
            frames: 8,
            height: 32,
            width: 32,
            static_labels: 4,
            dynamic_labels: 4,
            static_per_video: [0, 2],
            dynamic_per_video: [1, 1],
            dots_per_motion: 16,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn label_count(&self) -> usize {
        self.static_labels + self.dynamic_labels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.static_labels == 0 || self.dynamic_labels == 0 {
            return bad("static_labels and dynamic_labels must both be at least 1".into());
        }
        if ![8, 16, 32].contains(&self.frames) {
            return bad(format!("frames must be 8, 16 or 32, got {}", self.frames));
        }
        if self.height != self.width {
            return bad(format!("clips must be square, got {}x{}", self.height, self.width));
        }
        let cells = (self.height / TEMPLATE_CELL) * (self.width / TEMPLATE_CELL);
        if cells < self.static_labels {
            return bad(format!(
                "a {}x{} frame holds {} templates, {} requested",
                self.height, self.width, cells, self.static_labels
            ));
        }
        if self.dynamic_labels > VELOCITIES.len() {
            return bad(format!(
                "at most {} dynamic labels are supported",
                VELOCITIES.len()
            ));
        }
        for (name, [lo, hi], n) in [
            ("static_per_video", self.static_per_video, self.static_labels),
            ("dynamic_per_video", self.dynamic_per_video, self.dynamic_labels),
        ] {
            if lo > hi || hi > n {
                return bad(format!("{name} must satisfy min <= max <= {n}, got [{lo}, {hi}]"));
            }
        }
        if self.static_per_video[0] + self.dynamic_per_video[0] == 0 {
            return bad("every video needs at least one label".into());
        }
        if self.dots_per_motion == 0 {
            return bad("dots_per_motion must be at least 1".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn is_static(&self, label: usize) -> bool {
        label < self.static_labels
    }
}

/// Per-label pixel velocities `(dy, dx)`, one per dynamic label.
const VELOCITIES: [(i64, i64); 24] = [
    (0, 2),
    (2, 0),
    (0, -2),
    (-2, 0),
    (2, 2),
    (2, -2),
    (-2, 2),
    (-2, -2),
    (0, 1),
    (1, 0),
    (0, -1),
    (-1, 0),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
    (0, 3),
    (3, 0),
    (0, -3),
    (-3, 0),
    (3, 3),
    (3, -3),
    (-3, 3),
    (-3, -3),
];

/// The generated taxonomy and manifest, plus the spec needed to render clips.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    spec: SyntheticSpec,
    taxonomy: Taxonomy,
    manifest: Manifest,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Taxonomy, Manifest)> {
    let c = SyntheticCorpus::new(spec.clone())?;
    Ok((c.taxonomy, c.manifest))
}

/// Renders one clip `(3, T, H, W)` of the corpus described by `spec`.
pub fn render_clip(video_id: &str, spec: &SyntheticSpec) -> Result<Tensor> {
    SyntheticCorpus::new(spec.clone())?.render(video_id)
}

impl SyntheticCorpus {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut labels = Vec::with_capacity(spec.label_count());
        for s in 0..spec.static_labels {
            labels.push(Label {
                id: s,
                name: format!("shape-{s:02}"),
                category: STATIC_CATEGORIES[s % STATIC_CATEGORIES.len()],
            });
        }
        for d in 0..spec.dynamic_labels {
            labels.push(Label {
                id: spec.static_labels + d,
                name: format!("motion-{d:02}"),
                category: DYNAMIC_CATEGORIES[d % DYNAMIC_CATEGORIES.len()],
            });
        }
        let taxonomy = Taxonomy::new(labels)?;
        let mut manifest = Manifest::default();
        for (split, n) in [
            (Split::Train, spec.n_train),
            (Split::Val, spec.n_val),
            (Split::Test, spec.n_test),
        ] {
            for i in 0..n {
                let video_id = format!("{}-{:05}", split.as_str(), i);
                let mut rng = rng_for(mix(spec.seed, STREAM_LABELS), hash_str(&video_id));
                let mut labels = Vec::new();
                for ([lo, hi], first, n) in [
                    (spec.static_per_video, 0, spec.static_labels),
                    (spec.dynamic_per_video, spec.static_labels, spec.dynamic_labels),
                ] {
                    let k = rng.random_range(lo..=hi);
                    let mut pool: Vec<usize> = (first..first + n).collect();
                    for j in 0..k {
                        let pick = rng.random_range(j..n);
                        pool.swap(j, pick);
                    }
                    labels.extend_from_slice(&pool[..k]);
                }
                manifest.push(AnnotationRecord {
                    video_id,
                    split,
                    labels,
                    confidences: None,
                })?;
            }
        }
        Ok(Self {
            spec,
            taxonomy,
            manifest,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn render(&self, video_id: &str) -> Result<Tensor> {
        let record = self
            .manifest
            .get(video_id)
            .ok_or_else(|| Error::UnknownVideo(video_id.into()))?;
        Ok(self.render_labels(&record.labels, hash_str(video_id)))
    }

    /// Renders an arbitrary label set; `key` seeds dot placement and noise.
    pub fn render_labels(&self, labels: &[usize], key: u64) -> Tensor {
        let s = &self.spec;
        let (t_len, h, w) = (s.frames, s.height, s.width);
        let mut clip = Tensor::full(&[3, t_len, h, w], BACKGROUND);
        let mut rng = rng_for(mix(s.seed, STREAM_RENDER), key);
        let plane = t_len * h * w;
        let data = clip.data_mut();
        let mut put = |c: usize, t: usize, y: usize, x: usize, v: f64| {
            data[c * plane + (t * h + y) * w + x] = v;
        };
        for &l in labels.iter().filter(|&&l| s.is_static(l)) {
            let color = palette(l);
            let cols = w / TEMPLATE_CELL;
            let (y0, x0) = (
                (l / cols) * TEMPLATE_CELL + TEMPLATE_MARGIN,
                (l % cols) * TEMPLATE_CELL + TEMPLATE_MARGIN,
            );
            let side = TEMPLATE_CELL - 2 * TEMPLATE_MARGIN;
            for t in 0..t_len {
                for dy in 0..side {
                    for dx in 0..side {
                        if template_mask(l, dy, dx, side) {
                            for (c, &v) in color.iter().enumerate() {
                                put(c, t, y0 + dy, x0 + dx, v);
                            }
                        }
                    }
                }
            }
        }
        let dot = DOT_SIZE as i64;
        for &l in labels.iter().filter(|&&l| !s.is_static(l)) {
            let (vy, vx) = VELOCITIES[l - s.static_labels];
            for _ in 0..s.dots_per_motion {
                let y0 = rng.random_range(0..h) as i64;
                let x0 = rng.random_range(0..w) as i64;
                for t in 0..t_len {
                    let yt = y0 + vy * t as i64;
                    let xt = x0 + vx * t as i64;
                    for dy in 0..dot {
                        for dx in 0..dot {
                            let y = (yt + dy).rem_euclid(h as i64) as usize;
                            let x = (xt + dx).rem_euclid(w as i64) as usize;
                            for c in 0..3 {
                                put(c, t, y, x, 1.0);
                            }
                        }
                    }
                }
            }
        }
        if s.noise_std > 0.0 {
            for v in clip.data_mut() {
                *v = (*v + s.noise_std * normal(&mut rng)).clamp(0.0, 1.0);
            }
        }
        clip
    }

    /// Pixels of frame-invariant content for static label `l`: `(y, x)` pairs.
    pub fn template_pixels(&self, l: usize) -> Vec<(usize, usize)> {
        let cols = self.spec.width / TEMPLATE_CELL;
        let (y0, x0) = (
            (l / cols) * TEMPLATE_CELL + TEMPLATE_MARGIN,
            (l % cols) * TEMPLATE_CELL + TEMPLATE_MARGIN,
        );
        let side = TEMPLATE_CELL - 2 * TEMPLATE_MARGIN;
        let mut px = Vec::new();
        for dy in 0..side {
            for dx in 0..side {
                if template_mask(l, dy, dx, side) {
                    px.push((y0 + dy, x0 + dx));
                }
            }
        }
        px
    }

    /// Clips for every record of `split`, keyed by video id.
    pub fn render_split(&self, split: Split) -> Result<BTreeMap<String, Tensor>> {
        self.manifest
            .split(split)
            .into_iter()
            .map(|r| Ok((r.video_id.clone(), self.render(&r.video_id)?)))
            .collect()
    }
}

/// Three template shapes: filled square, hollow square and plus sign.
fn template_mask(label: usize, dy: usize, dx: usize, side: usize) -> bool {
    let mid = side / 2;
    match label % 3 {
        0 => true,
        1 => dy == 0 || dx == 0 || dy == side - 1 || dx == side - 1,
        _ => dy == mid || dy + 1 == mid || dx == mid || dx + 1 == mid,
    }
}

/// Saturated colours spread around the hue circle by the golden ratio.
fn palette(label: usize) -> [f64; 3] {
    let golden = label as f64 * 0.618_033_988_749_895;
    let hue = (golden - libm::floor(golden)) * 6.0;
    let sector = hue as usize % 6;
    let f = hue - libm::floor(hue);
    let (q, t) = (1.0 - f, f);
    let rgb = match sector {
        0 => [1.0, t, 0.0],
        1 => [q, 1.0, 0.0],
        2 => [0.0, 1.0, t],
        3 => [0.0, q, 1.0],
        4 => [t, 0.0, 1.0],
        _ => [1.0, 0.0, q],
    };
    // Keep templates clearly away from both the background and the white dots.
    rgb.map(|v| 0.1 + 0.8 * v)
}
