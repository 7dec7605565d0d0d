//! Residual building blocks shared by the 2D and 3D branches.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::model::config::Backbone;
use crate::nn::{join_path, relu_backward_in_place, relu_in_place, BatchNorm, Conv3d, Module, NormCache, Param};
use crate::tensor::Tensor;

/// Which branch a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    /// Temporal kernel 1: frames never mix.
    Frame2d,
    /// 3x3x3 kernels over (T, H, W).
    Volume3d,
}

impl BranchKind {
    fn temporal_kernel(self) -> usize {
        match self {
            BranchKind::Frame2d => 1,
            BranchKind::Volume3d => 3,
        }
    }
}

/// Convolution followed by batch normalisation.
#[derive(Debug, Clone)]
pub struct ConvNorm {
    pub conv: Conv3d,
    pub norm: BatchNorm,
}

#[derive(Debug, Clone)]
pub struct ConvNormCache {
    input: Tensor,
    norm: NormCache,
}

impl ConvNorm {
    pub fn new<R: Rng>(
        kind: BranchKind,
        cin: usize,
        cout: usize,
        spatial_kernel: usize,
        temporal: bool,
        spatial_stride: usize,
        rng: &mut R,
    ) -> Self {
        let kt = if temporal { kind.temporal_kernel() } else { 1 };
        let conv = Conv3d::new(
            cin,
            cout,
            [kt, spatial_kernel, spatial_kernel],
            [1, spatial_stride, spatial_stride],
            [kt / 2, spatial_kernel / 2, spatial_kernel / 2],
            false,
            rng,
        );
        Self {
            conv,
            norm: BatchNorm::new(cout),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvNormCache)> {
        let a = self.conv.forward(x)?;
        let (y, norm) = self.norm.forward(&a)?;
        Ok((
            y,
            ConvNormCache {
                input: x.clone(),
                norm,
            },
        ))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.norm.infer(&self.conv.forward(x)?)
    }

    pub fn backward(&mut self, cache: &ConvNormCache, dy: &Tensor) -> Result<Tensor> {
        let da = self.norm.backward(&cache.norm, dy)?;
        self.conv.backward(&cache.input, &da)
    }
}

impl Module for ConvNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit(&join_path(prefix, "conv"), f);
        self.norm.visit(&join_path(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_mut(&join_path(prefix, "conv"), f);
        self.norm.visit_mut(&join_path(prefix, "norm"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.norm.visit_buffers(&join_path(prefix, "norm"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm.visit_buffers_mut(&join_path(prefix, "norm"), f);
    }
}

/// Stem: one 7x7 convolution (3x7x7 in the 3D branch) with spatial stride
/// 2, normalisation and ReLU. No pooling follows it in either branch.
#[derive(Debug, Clone)]
pub struct Stem {
    pub unit: ConvNorm,
}

#[derive(Debug, Clone)]
pub struct StemCache {
    unit: ConvNormCache,
    out: Tensor,
}

impl Stem {
    pub fn new<R: Rng>(kind: BranchKind, cout: usize, rng: &mut R) -> Self {
        Self {
            unit: ConvNorm::new(kind, 3, cout, 7, true, 2, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, StemCache)> {
        let (mut y, unit) = self.unit.forward(x)?;
        relu_in_place(&mut y);
        Ok((y.clone(), StemCache { unit, out: y }))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.unit.infer(x)?;
        relu_in_place(&mut y);
        Ok(y)
    }

    pub fn backward(&mut self, cache: &StemCache, dy: &Tensor) -> Result<Tensor> {
        let mut d = dy.clone();
        relu_backward_in_place(&mut d, &cache.out);
        self.unit.backward(&cache.unit, &d)
    }
}

impl Module for Stem {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.unit.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.unit.visit_mut(prefix, f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.unit.visit_buffers(prefix, f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.unit.visit_buffers_mut(prefix, f);
    }
}

/// Residual block: two 3x3 units (basic) or 1x1 / 3x3 / 1x1 units with 4x
/// expansion (bottleneck), plus a projection shortcut when the shape changes.
#[derive(Debug, Clone)]
pub struct Block {
    pub units: Vec<ConvNorm>,
    pub shortcut: Option<ConvNorm>,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    units: Vec<ConvNormCache>,
    shortcut: Option<ConvNormCache>,
    out: Tensor,
}

impl Block {
    pub fn new<R: Rng>(
        kind: BranchKind,
        backbone: Backbone,
        cin: usize,
        width: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let cout = width * backbone.expansion();
        let units = match backbone {
            Backbone::R18 => alloc::vec![
                ConvNorm::new(kind, cin, width, 3, true, stride, rng),
                ConvNorm::new(kind, width, width, 3, true, 1, rng),
            ],
            Backbone::R50 => alloc::vec![
                ConvNorm::new(kind, cin, width, 1, false, 1, rng),
                ConvNorm::new(kind, width, width, 3, true, stride, rng),
                ConvNorm::new(kind, width, cout, 1, false, 1, rng),
            ],
        };
        let shortcut =
            (stride != 1 || cin != cout).then(|| ConvNorm::new(kind, cin, cout, 1, false, stride, rng));
        Self { units, shortcut }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, BlockCache)> {
        let mut caches = Vec::with_capacity(self.units.len());
        let mut h = x.clone();
        let last = self.units.len() - 1;
        for (i, u) in self.units.iter().enumerate() {
            let (mut y, c) = u.forward(&h)?;
            if i != last {
                relu_in_place(&mut y);
            }
            caches.push(c);
            h = y;
        }
        let shortcut = match &self.shortcut {
            Some(s) => {
                let (y, c) = s.forward(x)?;
                h.add_assign(&y);
                Some(c)
            }
            None => {
                h.add_assign(x);
                None
            }
        };
        relu_in_place(&mut h);
        Ok((
            h.clone(),
            BlockCache {
                units: caches,
                shortcut,
                out: h,
            },
        ))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.units.len() - 1;
        for (i, u) in self.units.iter().enumerate() {
            h = u.infer(&h)?;
            if i != last {
                relu_in_place(&mut h);
            }
        }
        match &self.shortcut {
            Some(s) => h.add_assign(&s.infer(x)?),
            None => h.add_assign(x),
        }
        relu_in_place(&mut h);
        Ok(h)
    }

    pub fn backward(&mut self, cache: &BlockCache, dy: &Tensor) -> Result<Tensor> {
        let mut d = dy.clone();
        relu_backward_in_place(&mut d, &cache.out);
        let mut dx = match (&mut self.shortcut, &cache.shortcut) {
            (Some(s), Some(c)) => s.backward(c, &d)?,
            _ => d.clone(),
        };
        let mut g = d;
        for i in (0..self.units.len()).rev() {
            g = self.units[i].backward(&cache.units[i], &g)?;
            if i > 0 {
                // The unit's input is the ReLU output of the previous unit.
                relu_backward_in_place(&mut g, &cache.units[i].input);
            }
        }
        dx.add_assign(&g);
        Ok(dx)
    }
}

impl Module for Block {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, u) in self.units.iter().enumerate() {
            u.visit(&join_path(prefix, &format!("conv{}", i + 1)), f);
        }
        if let Some(s) = &self.shortcut {
            s.visit(&join_path(prefix, "shortcut"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, u) in self.units.iter_mut().enumerate() {
            u.visit_mut(&join_path(prefix, &format!("conv{}", i + 1)), f);
        }
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&join_path(prefix, "shortcut"), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, u) in self.units.iter().enumerate() {
            u.visit_buffers(&join_path(prefix, &format!("conv{}", i + 1)), f);
        }
        if let Some(s) = &self.shortcut {
            s.visit_buffers(&join_path(prefix, "shortcut"), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, u) in self.units.iter_mut().enumerate() {
            u.visit_buffers_mut(&join_path(prefix, &format!("conv{}", i + 1)), f);
        }
        if let Some(s) = &mut self.shortcut {
            s.visit_buffers_mut(&join_path(prefix, "shortcut"), f);
        }
    }
}

/// A run of residual blocks; the first one carries the stride and width change.
#[derive(Debug, Clone)]
pub struct Stage {
    pub kind: BranchKind,
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
pub struct StageCache {
    blocks: Vec<BlockCache>,
}

impl Stage {
    pub fn new<R: Rng>(
        kind: BranchKind,
        backbone: Backbone,
        cin: usize,
        width: usize,
        n_blocks: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let cout = width * backbone.expansion();
        let blocks = (0..n_blocks)
            .map(|i| {
                let (c, s) = if i == 0 { (cin, stride) } else { (cout, 1) };
                Block::new(kind, backbone, c, width, s, rng)
            })
            .collect();
        Self { kind, blocks }
    }

    pub fn in_channels(&self) -> usize {
        self.blocks[0].units[0].conv.in_channels()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, StageCache)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for b in &self.blocks {
            let (y, c) = b.forward(&h)?;
            caches.push(c);
            h = y;
        }
        Ok((h, StageCache { blocks: caches }))
    }

    /// Inference forward pass with running normalisation statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.infer(&h)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, cache: &StageCache, dy: &Tensor) -> Result<Tensor> {
        let mut g = dy.clone();
        for i in (0..self.blocks.len()).rev() {
            g = self.blocks[i].backward(&cache.blocks[i], &g)?;
        }
        Ok(g)
    }
}

impl Module for Stage {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join_path(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join_path(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_buffers(&join_path(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_buffers_mut(&join_path(prefix, &format!("block{i}")), f);
        }
    }
}
