//! Training loop, evaluation, fine-tuning and checkpoint snapshots.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{batch_iter, AnnotationRecord, ClipSource};
use crate::error::{Error, Result};
use crate::loss::{
    bce_loss_with_grad, category_columns, multi_task_loss_with_grad, scatter_columns, TargetMatrix,
};
use crate::metrics::{map_report, MapReport, PredictionMatrix};
use crate::model::{HeadMode, HeadOutput, ModelConfig, Network};
use crate::nn::Module;
use crate::optim::{Sgd, StepSchedule};
use crate::rng::mix;
use crate::taxonomy::{Category, Taxonomy};
use crate::tensor::Tensor;

fn default_epochs() -> usize {
    10
}
fn default_batch_size() -> usize {
    8
}
fn default_lr() -> f64 {
    0.05
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_active() -> Vec<Category> {
    Category::ALL.to_vec()
}
fn default_weights() -> [f64; 6] {
    [1.0; 6]
}

/// Optimisation settings. Every field has a default, and unknown keys are
/// rejected when deserialising.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Step decay; `None` means x0.1 at 50% and 75% of the epochs.
    #[serde(default)]
    pub schedule: Option<StepSchedule>,
    #[serde(default)]
    pub seed: u64,
    /// Categories whose labels contribute to the loss.
    #[serde(default = "default_active")]
    pub active_categories: Vec<Category>,
    /// Overrides the model's head mode when given.
    #[serde(default)]
    pub head_mode: Option<HeadMode>,
    /// Per-head weights in category order (multitask heads only).
    #[serde(default = "default_weights")]
    pub loss_weights: [f64; 6],
    /// Skip the per-epoch validation pass.
    #[serde(default)]
    pub skip_validation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            lr: default_lr(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            schedule: None,
            seed: 0,
            active_categories: default_active(),
            head_mode: None,
            loss_weights: default_weights(),
            skip_validation: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTrainConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.active_categories.is_empty() {
            return bad("active_categories must not be empty".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.loss_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad(format!("loss weights must be finite and non-negative: {:?}", self.loss_weights));
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepSchedule {
        self.schedule.clone().unwrap_or_else(|| StepSchedule::conventional(self.epochs))
    }

    /// Head weights with inactive categories zeroed.
    pub fn effective_weights(&self) -> [f64; 6] {
        let mut w = self.loss_weights;
        for c in Category::ALL {
            if !self.active_categories.contains(&c) {
                w[c.index()] = 0.0;
            }
        }
        w
    }

    pub fn is_active(&self, c: Category) -> bool {
        self.active_categories.contains(&c)
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_map: Option<f64>,
    pub val_map_per_category: BTreeMap<String, Option<f64>>,
}

/// Parameters, architecture and provenance of a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Parameters and normalisation running statistics, keyed by module path.
    pub params: BTreeMap<String, Tensor>,
    /// Identifies the taxonomy the heads were trained against.
    pub fingerprint: String,
    pub step: u64,
}

impl Checkpoint {
    pub fn from_network(net: &Network, fingerprint: &str, step: u64) -> Self {
        Self {
            config: net.config().clone(),
            params: net.state(),
            fingerprint: fingerprint.into(),
            step,
        }
    }

    /// Rebuilds the network with exactly the stored state.
    pub fn to_network(&self) -> Result<Network> {
        let mut net = Network::new(self.config.clone(), 0)?;
        for name in net.state_names() {
            if !self.params.contains_key(&name) {
                return Err(Error::MissingParameter(name));
            }
        }
        net.load_state(&self.params, &|_| true)?;
        Ok(net)
    }
}

/// Returned by the per-epoch callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochControl {
    Continue,
    /// End training after the current epoch.
    Stop,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<EpochRecord>,
    /// Optimiser steps taken.
    pub steps: u64,
}

/// Records to fit on and to validate against.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub taxonomy: &'a Taxonomy,
    pub train: &'a [&'a AnnotationRecord],
    pub val: &'a [&'a AnnotationRecord],
    pub source: &'a dyn ClipSource,
}

/// Loss of one batch and its gradient with respect to the `(B, L)` logits.
pub fn batch_loss(
    out: &HeadOutput,
    targets: &Tensor,
    categories: &[Category],
    cfg: &TrainConfig,
) -> Result<(f64, Tensor)> {
    match &out.blocks {
        None => {
            let tm = TargetMatrix::masked_to(targets.clone(), categories, &cfg.active_categories)?;
            bce_loss_with_grad(&out.logits, &tm)
        }
        Some(blocks) => {
            let tm = TargetMatrix::full(targets.clone());
            let split = tm.split_by_category(categories);
            let (loss, grads) = multi_task_loss_with_grad(blocks, &split, &cfg.effective_weights())?;
            let mut dlogits = Tensor::zeros(out.logits.shape());
            for (g, cols) in grads.iter().zip(category_columns(categories)) {
                scatter_columns(&mut dlogits, g, &cols);
            }
            Ok((loss, dlogits))
        }
    }
}

/// Scores (sigmoid of the logits) for every record, with their mean loss.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub predictions: PredictionMatrix,
    pub report: MapReport,
}

pub fn evaluate(
    net: &Network,
    records: &[&AnnotationRecord],
    source: &dyn ClipSource,
    taxonomy: &Taxonomy,
    cfg: &TrainConfig,
) -> Result<Evaluation> {
    let l = taxonomy.len();
    let cats = taxonomy.categories();
    let mut ids = Vec::with_capacity(records.len());
    let mut scores = Vec::with_capacity(records.len() * l);
    let mut rel = Vec::with_capacity(records.len() * l);
    let mut loss_sum = 0.0;
    for batch in batch_iter(records.to_vec(), source, l, cfg.batch_size, None) {
        let batch = batch?;
        let out = net.forward(&batch.clips)?;
        let (loss, _) = batch_loss(&out, &batch.targets, &cats, cfg)?;
        loss_sum += loss * batch.video_ids.len() as f64;
        scores.extend(out.logits.data().iter().map(|&z| sigmoid(z)));
        rel.extend_from_slice(batch.targets.data());
        ids.extend(batch.video_ids);
    }
    let n = ids.len();
    let predictions = PredictionMatrix::new(
        ids,
        Tensor::from_vec(&[n, l], scores)?,
        Tensor::from_vec(&[n, l], rel)?,
    )?;
    let report = map_report(&predictions, taxonomy)?;
    Ok(Evaluation {
        loss: if n == 0 { 0.0 } else { loss_sum / n as f64 },
        predictions,
        report,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

fn model_config(model: ModelConfig, cfg: &TrainConfig, taxonomy: &Taxonomy) -> Result<ModelConfig> {
    let mut model = model;
    if let Some(h) = cfg.head_mode {
        model.head_mode = h;
    }
    if model.label_categories != taxonomy.categories() {
        return Err(Error::InvalidConfig(format!(
            "model is bound to {} labels but the taxonomy has {}",
            model.n_labels(),
            taxonomy.len()
        )));
    }
    Ok(model)
}

/// Pooled trunk features `(N, D)`, one row per record in the given order.
pub fn extract_features(
    net: &Network,
    records: &[&AnnotationRecord],
    source: &dyn ClipSource,
    batch_size: usize,
) -> Result<Tensor> {
    let d = net.feature_dim();
    let mut rows = Vec::with_capacity(records.len() * d);
    let l = net.config().n_labels();
    for batch in batch_iter(records.to_vec(), source, l, batch_size.max(1), None) {
        let batch = batch?;
        rows.extend_from_slice(net.features(&batch.clips)?.data());
    }
    Tensor::from_vec(&[records.len(), d], rows)
}

/// Trains a freshly initialised network. `on_epoch` sees each history
/// record and the network as soon as an epoch ends, and may stop the run.
pub fn train(
    model: ModelConfig,
    cfg: &TrainConfig,
    data: TrainData<'_>,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Network) -> EpochControl,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = model_config(model, cfg, data.taxonomy)?;
    let net = Network::new(model, cfg.seed)?;
    fit(net, cfg, data, on_epoch)
}

/// Starts from the trunk of `source`, with heads re-initialised for the
/// taxonomy in `data`, then trains as [`train`] does.
pub fn finetune(
    source: &Checkpoint,
    cfg: &TrainConfig,
    data: TrainData<'_>,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Network) -> EpochControl,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = source.config.clone();
    model.label_categories = data.taxonomy.categories();
    let model = model_config(model, cfg, data.taxonomy)?;
    let mut net = Network::new(model, cfg.seed)?;
    net.load_state(&source.params, &|n| !Network::is_head_param(n))?;
    fit(net, cfg, data, on_epoch)
}

/// Runs SGD on an existing network.
pub fn fit(
    mut net: Network,
    cfg: &TrainConfig,
    data: TrainData<'_>,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Network) -> EpochControl,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() && cfg.epochs > 0 {
        return Err(Error::NoVideos);
    }
    let cats = data.taxonomy.categories();
    let l = data.taxonomy.len();
    let schedule = cfg.schedule();
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut steps = 0u64;
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(cfg.lr, epoch);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let order_seed = mix(cfg.seed, 0x5eed_0000 + epoch as u64);
        for (bi, batch) in batch_iter(data.train.to_vec(), data.source, l, cfg.batch_size, Some(order_seed)).enumerate() {
            let batch = batch?;
            let (out, cache) = net.forward_train(&batch.clips)?;
            let (loss, dlogits) = batch_loss(&out, &batch.targets, &cats, cfg)?;
            if !loss.is_finite() || !out.logits.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    max_abs_logit: out.logits.max_abs(),
                });
            }
            net.zero_grad();
            net.backward(&cache, &dlogits)?;
            opt.step(&mut net, lr);
            steps += 1;
            let b = batch.video_ids.len();
            loss_sum += loss * b as f64;
            seen += b;
        }
        let mut record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss: None,
            val_map: None,
            val_map_per_category: BTreeMap::new(),
        };
        if !cfg.skip_validation && !data.val.is_empty() {
            let ev = evaluate(&net, data.val, data.source, data.taxonomy, cfg)?;
            record.val_loss = Some(ev.loss);
            record.val_map = ev.report.overall;
            for c in Category::ALL {
                record
                    .val_map_per_category
                    .insert(c.as_str().into(), ev.report.category(c));
            }
        }
        let control = on_epoch(&record, &net);
        history.push(record);
        if control == EpochControl::Stop {
            break;
        }
    }
    Ok(TrainOutcome {
        network: net,
        history,
        steps,
    })
}
