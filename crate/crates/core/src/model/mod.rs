//! The two-branch video network, its 3D baseline and the classification heads.

mod blocks;
mod config;
mod heads;
mod merge;
mod network;

pub use blocks::{Block, BranchKind, ConvNorm, Stage, Stem};
pub use config::{Backbone, HeadMode, Mode, ModelConfig, ShapePlan};
pub use heads::{Head, HeadOutput};
pub use merge::{MergeCache, MergeReduce};
pub use network::{Branch, Network, NetworkCache};

#[cfg(test)]
mod tests;
