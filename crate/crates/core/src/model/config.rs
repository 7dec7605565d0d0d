use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv_output_dims;
use crate::taxonomy::{Category, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    /// Basic two-conv blocks, counts (2, 2, 2, 2).
    R18,
    /// Bottleneck three-conv blocks with 4x expansion, counts (3, 4, 6, 3).
    R50,
}

impl Backbone {
    pub fn blocks(self) -> [usize; 4] {
        match self {
            Backbone::R18 => [2, 2, 2, 2],
            Backbone::R50 => [3, 4, 6, 3],
        }
    }

    pub fn expansion(self) -> usize {
        match self {
            Backbone::R18 => 1,
            Backbone::R50 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Parallel per-frame 2D and 3D branches fused after every stage.
    Hatnet,
    /// Plain 3D residual network.
    Resnet3d,
    /// Only the per-frame 2D branch.
    #[serde(rename = "branch2d_only")]
    Branch2dOnly,
    /// Only the 3D branch; structurally identical to `Resnet3d`.
    #[serde(rename = "branch3d_only")]
    Branch3dOnly,
}

impl Mode {
    pub fn has_2d(self) -> bool {
        matches!(self, Mode::Hatnet | Mode::Branch2dOnly)
    }

    pub fn has_3d(self) -> bool {
        !matches!(self, Mode::Branch2dOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// One affine map over all labels.
    Single,
    /// One affine map per category.
    Multitask,
}

fn default_true() -> bool {
    true
}

/// Architecture hyperparameters plus the label space the heads are bound to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub mode: Mode,
    pub frames: usize,
    pub input_size: usize,
    pub stage_channels: Vec<usize>,
    pub head_mode: HeadMode,
    /// Category of every label, in label-id order.
    pub label_categories: Vec<Category>,
    /// Normalise and rectify after the merge 1x1x1 convolution.
    #[serde(default = "default_true")]
    pub merge_norm: bool,
}

impl ModelConfig {
    /// r18-style HATNet with the default widths (64, 128, 256, 512) and 112x112 input.
    pub fn new(mode: Mode, frames: usize, taxonomy: &Taxonomy) -> Self {
        Self {
            backbone: Backbone::R18,
            mode,
            frames,
            input_size: 112,
            stage_channels: vec![64, 128, 256, 512],
            head_mode: HeadMode::Single,
            label_categories: taxonomy.categories(),
            merge_norm: true,
        }
    }

    /// The small configuration used for gradient checks and desk experiments.
    pub fn tiny(mode: Mode, frames: usize, taxonomy: &Taxonomy) -> Self {
        Self {
            input_size: 32,
            stage_channels: vec![8, 16, 16, 16],
            ..Self::new(mode, frames, taxonomy)
        }
    }

    pub fn n_labels(&self) -> usize {
        self.label_categories.len()
    }

    pub fn category_counts(&self) -> [usize; 6] {
        let mut c = [0; 6];
        for cat in &self.label_categories {
            c[cat.index()] += 1;
        }
        c
    }

    /// Output channels of stage `i` (after bottleneck expansion).
    pub fn stage_out_channels(&self, i: usize) -> usize {
        self.stage_channels[i] * self.backbone.expansion()
    }

    /// Width of the pooled trunk features.
    pub fn feature_dim(&self) -> usize {
        self.stage_out_channels(3)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if self.input_size < 32 || !self.input_size.is_multiple_of(16) {
            return bad(format!(
                "input_size must be >= 32 and divisible by 16, got {}",
                self.input_size
            ));
        }
        if self.frames < 4 || !self.frames.is_multiple_of(2) {
            return bad(format!("frames must be even and >= 4, got {}", self.frames));
        }
        if self.stage_channels.len() != 4 || self.stage_channels.contains(&0) {
            return bad(format!(
                "stage_channels must list four positive widths, got {:?}",
                self.stage_channels
            ));
        }
        if self.label_categories.is_empty() {
            return bad("the model must be bound to at least one label".into());
        }
        Ok(())
    }

    /// Output shapes of the stem and of each stage (after fusion) for
    /// `batch` clips of `frames` frames.
    pub fn shape_plan(&self, batch: usize, frames: usize) -> ShapePlan {
        let s = self.input_size;
        let [_, stem_h, stem_w] = conv_output_dims([frames, s, s], [1, 7, 7], [1, 2, 2], [0, 3, 3]);
        let stem = [batch, self.stage_channels[0], frames, stem_h, stem_w];
        let mut stages = [[0; 5]; 4];
        let (mut h, mut w) = (stem_h, stem_w);
        for (i, st) in stages.iter_mut().enumerate() {
            if i > 0 {
                let [_, nh, nw] = conv_output_dims([frames, h, w], [1, 3, 3], [1, 2, 2], [0, 1, 1]);
                h = nh;
                w = nw;
            }
            *st = [batch, self.stage_out_channels(i), frames, h, w];
        }
        ShapePlan {
            stem,
            stages,
            features: [batch, self.feature_dim()],
        }
    }
}

/// Tensor shapes through the trunk, computed without running it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapePlan {
    pub stem: [usize; 5],
    pub stages: [[usize; 5]; 4],
    pub features: [usize; 2],
}

impl ShapePlan {
    pub fn stage_shapes(&self) -> Vec<[usize; 5]> {
        self.stages.to_vec()
    }
}
