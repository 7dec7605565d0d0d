use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::blocks::{BranchKind, Stage, StageCache, Stem, StemCache};
use crate::model::config::{ModelConfig, ShapePlan};
use crate::model::heads::{Head, HeadOutput};
use crate::model::merge::{MergeCache, MergeReduce};
use crate::nn::{global_avg_pool, global_avg_pool_backward, join_path, Module, Param};
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// One branch of the trunk: a stem followed by four stages.
#[derive(Debug, Clone)]
pub struct Branch {
    pub stem: Stem,
    pub stages: Vec<Stage>,
}

impl Branch {
    fn new(kind: BranchKind, config: &ModelConfig, seed: u64, stream: u64) -> Self {
        let mut rng = rng_for(seed, stream);
        let stem = Stem::new(kind, config.stage_channels[0], &mut rng);
        let mut cin = config.stage_channels[0];
        let stages = (0..4)
            .map(|i| {
                let stride = if i == 0 { 1 } else { 2 };
                let s = Stage::new(
                    kind,
                    config.backbone,
                    cin,
                    config.stage_channels[i],
                    config.backbone.blocks()[i],
                    stride,
                    &mut rng,
                );
                cin = config.stage_out_channels(i);
                s
            })
            .collect();
        Self { stem, stages }
    }
}

impl Module for Branch {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.stem.visit(&join_path(prefix, "stem"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&join_path(prefix, &format!("stage{}", i + 1)), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.stem.visit_mut(&join_path(prefix, "stem"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&join_path(prefix, &format!("stage{}", i + 1)), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.stem.visit_buffers(&join_path(prefix, "stem"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit_buffers(&join_path(prefix, &format!("stage{}", i + 1)), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.stem.visit_buffers_mut(&join_path(prefix, "stem"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_buffers_mut(&join_path(prefix, &format!("stage{}", i + 1)), f);
        }
    }
}

/// HATNet and its ablations, or a plain 3D residual network, plus heads.
///
/// In HATNet mode each stage runs its 2D and 3D branches on the same input,
/// merges the two outputs, and feeds the fused map to both branches of the
/// next stage. The stems see the raw clip separately.
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    pub b2d: Option<Branch>,
    pub b3d: Option<Branch>,
    pub merges: Vec<MergeReduce>,
    pub head: Head,
}

/// Everything the backward pass needs from a training forward pass.
#[derive(Debug, Clone)]
pub struct NetworkCache {
    stems: [Option<StemCache>; 2],
    stages: Vec<[Option<StageCache>; 2]>,
    merges: Vec<Option<MergeCache>>,
    trunk_shape: Vec<usize>,
    features: Tensor,
}

impl NetworkCache {
    /// Pooled trunk features `(B, D)` from the forward pass.
    pub fn features(&self) -> &Tensor {
        &self.features
    }
}

impl Network {
    /// Builds a freshly initialised network. Each branch, the merge blocks
    /// and the head draw from independent streams of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mode = config.mode;
        let b2d = mode.has_2d().then(|| Branch::new(BranchKind::Frame2d, &config, seed, 1));
        let b3d = mode.has_3d().then(|| Branch::new(BranchKind::Volume3d, &config, seed, 2));
        let mut rng = rng_for(seed, 3);
        let merges = if mode.has_2d() && mode.has_3d() {
            (0..4)
                .map(|i| MergeReduce::new(config.stage_out_channels(i), config.merge_norm, &mut rng))
                .collect()
        } else {
            Vec::new()
        };
        let head = Head::new(&config, &mut rng_for(seed, 4));
        Ok(Self {
            config,
            b2d,
            b3d,
            merges,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    fn check_input(&self, clips: &Tensor) -> Result<()> {
        let [b, c, t, h, w] = clips.dims5()?;
        let s = self.config.input_size;
        if b == 0 || c != 3 || t == 0 || h != s || w != s {
            return Err(Error::Shape(format!(
                "expected clips of shape (B, 3, T, {s}, {s}), got {:?}",
                clips.shape()
            )));
        }
        Ok(())
    }

    /// Runs the trunk without keeping activations and returns the final
    /// feature map `(B, C, T, H', W')`.
    pub fn trunk(&self, clips: &Tensor) -> Result<Tensor> {
        self.trunk_traced(clips, &mut |_, _| {})
    }

    /// Like [`Network::trunk`], reporting the stem output (index 0) and each
    /// fused stage output (indices 1 to 4) to `trace`.
    pub fn trunk_traced(&self, clips: &Tensor, trace: &mut dyn FnMut(usize, &Tensor)) -> Result<Tensor> {
        self.check_input(clips)?;
        match (&self.b2d, &self.b3d) {
            (Some(b2), Some(b3)) => {
                let mut x2 = b2.stem.infer(clips)?;
                let mut x3 = b3.stem.infer(clips)?;
                trace(0, &x3);
                for i in 0..4 {
                    let y2 = b2.stages[i].infer(&x2)?;
                    let y3 = b3.stages[i].infer(&x3)?;
                    let m = self.merges[i].infer(&y2, &y3)?;
                    trace(i + 1, &m);
                    x2 = m.clone();
                    x3 = m;
                }
                Ok(x3)
            }
            (Some(b), None) | (None, Some(b)) => {
                let mut x = b.stem.infer(clips)?;
                trace(0, &x);
                for (i, s) in b.stages.iter().enumerate() {
                    x = s.infer(&x)?;
                    trace(i + 1, &x);
                }
                Ok(x)
            }
            (None, None) => unreachable!("a network has at least one branch"),
        }
    }

    /// Actual shapes through the trunk, in the layout of [`ModelConfig::shape_plan`].
    pub fn traced_shapes(&self, clips: &Tensor) -> Result<ShapePlan> {
        let mut stem = [0; 5];
        let mut stages = [[0; 5]; 4];
        let out = self.trunk_traced(clips, &mut |i, t| {
            let mut s = [0; 5];
            s.copy_from_slice(t.shape());
            if i == 0 {
                stem = s;
            } else {
                stages[i - 1] = s;
            }
        })?;
        Ok(ShapePlan {
            stem,
            stages,
            features: [out.dim(0), out.dim(1)],
        })
    }

    /// Globally pooled trunk features `(B, D)`.
    pub fn features(&self, clips: &Tensor) -> Result<Tensor> {
        global_avg_pool(&self.trunk(clips)?)
    }

    /// Inference forward pass.
    pub fn forward(&self, clips: &Tensor) -> Result<HeadOutput> {
        self.head.forward(&self.features(clips)?)
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward_train(&self, clips: &Tensor) -> Result<(HeadOutput, NetworkCache)> {
        self.check_input(clips)?;
        let mut stems: [Option<StemCache>; 2] = [None, None];
        let mut stages = Vec::with_capacity(4);
        let mut merges = Vec::with_capacity(4);
        let branches = [self.b2d.as_ref(), self.b3d.as_ref()];
        let mut inputs: [Option<Tensor>; 2] = [None, None];
        for k in 0..2 {
            if let Some(b) = branches[k] {
                let (y, c) = b.stem.forward(clips)?;
                inputs[k] = Some(y);
                stems[k] = Some(c);
            }
        }
        let mut trunk = Tensor::zeros(&[0]);
        for i in 0..4 {
            let mut outs: [Option<Tensor>; 2] = [None, None];
            let mut caches: [Option<StageCache>; 2] = [None, None];
            for k in 0..2 {
                if let (Some(b), Some(x)) = (branches[k], inputs[k].as_ref()) {
                    let (y, c) = b.stages[i].forward(x)?;
                    outs[k] = Some(y);
                    caches[k] = Some(c);
                }
            }
            stages.push(caches);
            let next = match outs {
                [Some(a), Some(b)] => {
                    let (m, c) = self.merges[i].forward(&a, &b)?;
                    merges.push(Some(c));
                    [Some(m.clone()), Some(m)]
                }
                [a, b] => {
                    merges.push(None);
                    [a, b]
                }
            };
            trunk = next.iter().flatten().next().expect("one branch").clone();
            inputs = next;
        }
        let features = global_avg_pool(&trunk)?;
        let out = self.head.forward(&features)?;
        Ok((
            out,
            NetworkCache {
                stems,
                stages,
                merges,
                trunk_shape: trunk.shape().to_vec(),
                features,
            },
        ))
    }

    /// Accumulates parameter gradients for `d loss / d logits`.
    pub fn backward(&mut self, cache: &NetworkCache, dlogits: &Tensor) -> Result<()> {
        let dfeat = self.head.backward(&cache.features, dlogits);
        let dtrunk = global_avg_pool_backward(&dfeat, &cache.trunk_shape);
        let mut grads: [Option<Tensor>; 2] = [None, None];
        let mut dfused = None;
        if !self.merges.is_empty() {
            dfused = Some(dtrunk);
        } else if self.b2d.is_some() {
            grads[0] = Some(dtrunk);
        } else {
            grads[1] = Some(dtrunk);
        }
        let Self { b2d, b3d, merges, .. } = self;
        let mut branches = [b2d.as_mut(), b3d.as_mut()];
        for i in (0..4).rev() {
            if let (Some(m), Some(mc)) = (merges.get_mut(i), &cache.merges[i]) {
                let d = dfused.take().expect("gradient of the fused map");
                let (da, db) = m.backward(mc, &d)?;
                grads = [Some(da), Some(db)];
            }
            let mut dins: [Option<Tensor>; 2] = [None, None];
            for k in 0..2 {
                if let (Some(b), Some(sc), Some(g)) =
                    (branches[k].as_deref_mut(), &cache.stages[i][k], grads[k].as_ref())
                {
                    dins[k] = Some(b.stages[i].backward(sc, g)?);
                }
            }
            if i > 0 && !merges.is_empty() {
                // The fused map fed both branches, so their input gradients add.
                let mut sum: Option<Tensor> = None;
                for d in dins.into_iter().flatten() {
                    match &mut sum {
                        Some(s) => s.add_assign(&d),
                        None => sum = Some(d),
                    }
                }
                dfused = sum;
                grads = [None, None];
            } else {
                grads = dins;
            }
        }
        for k in 0..2 {
            if let (Some(b), Some(sc), Some(g)) = (branches[k].as_deref_mut(), &cache.stems[k], grads[k].as_ref()) {
                b.stem.backward(sc, g)?;
            }
        }
        Ok(())
    }

    /// Snapshot of every trainable parameter keyed by module path.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        self.visit("", &mut |n, p| {
            out.insert(String::from(n), p.value.clone());
        });
        out
    }

    /// Parameters plus normalisation running statistics: everything needed
    /// to reproduce inference.
    pub fn state(&self) -> BTreeMap<String, Tensor> {
        let mut out = self.params();
        self.visit_buffers("", &mut |n, t| {
            out.insert(String::from(n), t.clone());
        });
        out
    }

    /// Copies the state entries selected by `keep` from `state`. Every
    /// selected entry must be present with a matching shape; otherwise
    /// nothing is changed and the offending names are reported.
    pub fn load_state(&mut self, state: &BTreeMap<String, Tensor>, keep: &dyn Fn(&str) -> bool) -> Result<()> {
        let mut bad = Vec::new();
        let mut check = |n: &str, t: &Tensor| {
            if keep(n) && state.get(n).is_none_or(|v| v.shape() != t.shape()) {
                bad.push(String::from(n));
            }
        };
        self.visit("", &mut |n, p| check(n, &p.value));
        self.visit_buffers("", &mut |n, t| check(n, t));
        if !bad.is_empty() {
            return Err(Error::IncompatibleTrunk(bad));
        }
        self.visit_mut("", &mut |n, p| {
            if keep(n) {
                p.value = state[n].clone();
            }
        });
        self.visit_buffers_mut("", &mut |n, t| {
            if keep(n) {
                *t = state[n].clone();
            }
        });
        Ok(())
    }

    /// True for parameters that belong to the classification head.
    pub fn is_head_param(name: &str) -> bool {
        name == "head" || name.starts_with("head.")
    }

    /// Parameter names in visiting order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit("", &mut |n, _| names.push(String::from(n)));
        names
    }

    /// Parameter names followed by running-statistic names.
    pub fn state_names(&self) -> Vec<String> {
        let mut names = self.param_names();
        self.visit_buffers("", &mut |n, _| names.push(String::from(n)));
        names
    }
}

impl Module for Network {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        if let Some(b) = &self.b2d {
            b.visit(&join_path(prefix, "b2d"), f);
        }
        if let Some(b) = &self.b3d {
            b.visit(&join_path(prefix, "b3d"), f);
        }
        for (i, m) in self.merges.iter().enumerate() {
            m.visit(&join_path(prefix, &format!("merge{}", i + 1)), f);
        }
        self.head.visit(&join_path(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(b) = &mut self.b2d {
            b.visit_mut(&join_path(prefix, "b2d"), f);
        }
        if let Some(b) = &mut self.b3d {
            b.visit_mut(&join_path(prefix, "b3d"), f);
        }
        for (i, m) in self.merges.iter_mut().enumerate() {
            m.visit_mut(&join_path(prefix, &format!("merge{}", i + 1)), f);
        }
        self.head.visit_mut(&join_path(prefix, "head"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(b) = &self.b2d {
            b.visit_buffers(&join_path(prefix, "b2d"), f);
        }
        if let Some(b) = &self.b3d {
            b.visit_buffers(&join_path(prefix, "b3d"), f);
        }
        for (i, m) in self.merges.iter().enumerate() {
            m.visit_buffers(&join_path(prefix, &format!("merge{}", i + 1)), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(b) = &mut self.b2d {
            b.visit_buffers_mut(&join_path(prefix, "b2d"), f);
        }
        if let Some(b) = &mut self.b3d {
            b.visit_buffers_mut(&join_path(prefix, "b3d"), f);
        }
        for (i, m) in self.merges.iter_mut().enumerate() {
            m.visit_buffers_mut(&join_path(prefix, &format!("merge{}", i + 1)), f);
        }
    }
}
