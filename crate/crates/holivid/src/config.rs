//! Run definitions: one strict JSON document per training run.
//!
//! ```json
//! {
//!   "model": { "backbone": "r18", "mode": "hatnet", "stage_channels": [8, 16, 16, 16] },
//!   "train": { "epochs": 20, "lr": 0.1 },
//!   "data":  { "synthetic": { "n_train": 64, "seed": 3 } },
//!   "paths": { "out": "runs/hat" }
//! }
//! ```
//!
//! Every section and every field is optional. Unknown keys anywhere are an
//! error that names the key.

use std::path::{Path, PathBuf};

use holivid_core::dataset::SyntheticSpec;
use holivid_core::model::{Backbone, HeadMode, Mode, ModelConfig};
use holivid_core::taxonomy::Taxonomy;
use holivid_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_string;

/// Architecture choices. The label space comes from the data, and `frames`
/// and `input_size` default to the clip geometry of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub backbone: Backbone,
    pub mode: Mode,
    pub frames: Option<usize>,
    pub input_size: Option<usize>,
    pub stage_channels: Vec<usize>,
    pub head_mode: HeadMode,
    pub merge_norm: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            backbone: Backbone::R18,
            mode: Mode::Hatnet,
            frames: None,
            input_size: None,
            stage_channels: vec![8, 16, 16, 16],
            head_mode: HeadMode::Single,
            merge_norm: true,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, taxonomy: &Taxonomy, frames: usize, input_size: usize) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone,
            mode: self.mode,
            frames: self.frames.unwrap_or(frames),
            input_size: self.input_size.unwrap_or(input_size),
            stage_channels: self.stage_channels.clone(),
            head_mode: self.head_mode,
            label_categories: taxonomy.categories(),
            merge_norm: self.merge_norm,
        }
    }
}

/// Where clips and annotations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    /// Generate the corpus in memory.
    Synthetic(SyntheticSpec),
    /// A directory written by `dataset synth` (and possibly pruned).
    Dir(PathBuf),
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub out: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub data: DataSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        if let DataSection::Synthetic(spec) = &cfg.data {
            spec.validate()?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_string(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The config with every default filled in, as JSON.
    pub fn resolved_json(&self) -> String {
        crate::io::to_sorted_json(self)
    }
}

/// Default values of every section, shown by `--help`.
pub fn defaults_help() -> String {
    let mut s = String::from("Run config defaults (every key optional, unknown keys rejected):\n");
    s.push_str(&RunConfig::default().resolved_json());
    s
}
