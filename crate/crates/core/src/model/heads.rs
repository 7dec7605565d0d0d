//! Classification heads applied to pooled trunk features.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::loss::{category_columns, scatter_columns};
use crate::model::config::{HeadMode, ModelConfig};
use crate::nn::{join_path, Linear, Module, Param};
use crate::taxonomy::Category;
use crate::tensor::Tensor;

/// Logits for a batch. In multitask mode `blocks` holds one `(B, n_c)` tensor
/// per category (in [`Category::ALL`] order, zero-width blocks included) and
/// `logits` scatters them back into label-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub logits: Tensor,
    pub blocks: Option<Vec<Tensor>>,
}

#[derive(Debug, Clone)]
pub enum Head {
    Single(Linear),
    Multitask {
        heads: Vec<Linear>,
        /// Label ids owned by each category head, in column order.
        columns: Vec<Vec<usize>>,
    },
}

impl Head {
    pub fn new<R: Rng>(config: &ModelConfig, rng: &mut R) -> Self {
        let d = config.feature_dim();
        match config.head_mode {
            HeadMode::Single => Head::Single(Linear::new(d, config.n_labels(), rng)),
            HeadMode::Multitask => {
                let columns = category_columns(&config.label_categories);
                let heads = columns.iter().map(|cols| Linear::new(d, cols.len(), rng)).collect();
                Head::Multitask { heads, columns }
            }
        }
    }

    pub fn n_labels(&self) -> usize {
        match self {
            Head::Single(l) => l.output_dim(),
            Head::Multitask { columns, .. } => columns.iter().map(Vec::len).sum(),
        }
    }

    pub fn forward(&self, features: &Tensor) -> Result<HeadOutput> {
        match self {
            Head::Single(l) => Ok(HeadOutput {
                logits: l.forward(features)?,
                blocks: None,
            }),
            Head::Multitask { heads, columns } => {
                let mut logits = Tensor::zeros(&[features.dim(0), self.n_labels()]);
                let mut blocks = Vec::with_capacity(heads.len());
                for (h, cols) in heads.iter().zip(columns) {
                    let y = h.forward(features)?;
                    scatter_columns(&mut logits, &y, cols);
                    blocks.push(y);
                }
                Ok(HeadOutput {
                    logits,
                    blocks: Some(blocks),
                })
            }
        }
    }

    /// Accumulates parameter gradients from `dlogits` (B, L) and returns the
    /// gradient with respect to the features.
    pub fn backward(&mut self, features: &Tensor, dlogits: &Tensor) -> Tensor {
        match self {
            Head::Single(l) => l.backward(features, dlogits),
            Head::Multitask { heads, columns } => {
                let b = features.dim(0);
                let n = dlogits.dim(1);
                let mut dx = Tensor::zeros(features.shape());
                for (h, cols) in heads.iter_mut().zip(columns.iter()) {
                    let mut dy = Tensor::zeros(&[b, cols.len()]);
                    for r in 0..b {
                        for (j, &col) in cols.iter().enumerate() {
                            dy.data_mut()[r * cols.len() + j] = dlogits.data()[r * n + col];
                        }
                    }
                    dx.add_assign(&h.backward(features, &dy));
                }
                dx
            }
        }
    }
}

impl Module for Head {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            Head::Single(l) => l.visit(prefix, f),
            Head::Multitask { heads, .. } => {
                for (h, c) in heads.iter().zip(Category::ALL) {
                    h.visit(&join_path(prefix, c.as_str()), f);
                }
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            Head::Single(l) => l.visit_mut(prefix, f),
            Head::Multitask { heads, .. } => {
                for (h, c) in heads.iter_mut().zip(Category::ALL) {
                    h.visit_mut(&join_path(prefix, c.as_str()), f);
                }
            }
        }
    }
}
