use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("row {row}: duplicate label_id {id}")]
    DuplicateLabelId { row: usize, id: usize },
    #[error("row {row}: unknown category {value:?}")]
    UnknownCategory { row: usize, value: String },
    #[error("row {row}: label ids are not contiguous (expected {expected}, found {found})")]
    NonContiguousIds { row: usize, expected: usize, found: usize },
    #[error("row {row}: duplicate name {name:?} in category {category}")]
    DuplicateLabelName {
        row: usize,
        name: String,
        category: &'static str,
    },
    #[error("video {video_id:?}: empty label set")]
    EmptyLabelSet { video_id: String },
    #[error("duplicate video_id {0:?}")]
    DuplicateVideoId(String),
    #[error("video {video_id:?}: label id {label} is not in the taxonomy")]
    DanglingLabel { video_id: String, label: usize },
    #[error("video {video_id:?}: confidences must cover exactly the labels")]
    ConfidenceMismatch { video_id: String },
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceRange(f64),
    #[error("no videos")]
    NoVideos,
    #[error("unknown video_id {0:?}")]
    UnknownVideo(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid train config: {0}")]
    InvalidTrainConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("NaN score at index {0}")]
    NanScore(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("k = {k} exceeds the number of points {n}")]
    TooManyClusters { k: usize, n: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (max |logit| = {max_abs_logit})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        max_abs_logit: f64,
    },
    #[error("incompatible trunk parameters: {}", .0.join(", "))]
    IncompatibleTrunk(Vec<String>),
    #[error("missing parameter {0:?}")]
    MissingParameter(String),
}

pub type Result<T> = core::result::Result<T, Error>;
