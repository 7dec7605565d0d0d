//! Paired multi-seed experiments on the synthetic corpus.
//!
//! Each driver trains from scratch for every seed, using the seed both for
//! the corpus and for initialisation, and reports per-seed values together
//! with their medians. All of them are deterministic given their setup.

use std::collections::BTreeMap;
use std::time::Instant;

use holivid_core::dataset::{ClipCache, ClipSource, Split, SyntheticCorpus, SyntheticSpec};
use holivid_core::kmeans::kmeans;
use holivid_core::metrics::{clustering_accuracy, MapReport};
use holivid_core::model::{Backbone, HeadMode, Mode, ModelConfig, Network};
use holivid_core::nn::Module;
use holivid_core::optim::StepSchedule;
use holivid_core::rng::mix;
use holivid_core::taxonomy::{Category, Taxonomy};
use holivid_core::train::{
    evaluate, extract_features, finetune, train, Checkpoint, EpochControl, TrainConfig, TrainData,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corpus, base widths and optimiser settings shared by one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setup {
    pub corpus: SyntheticSpec,
    pub stage_channels: Vec<usize>,
    pub train: TrainConfig,
}

impl Setup {
    fn corpus_for(&self, seed: u64) -> Result<SyntheticCorpus> {
        Ok(SyntheticCorpus::new(SyntheticSpec {
            seed,
            ..self.corpus.clone()
        })?)
    }

    fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            skip_validation: true,
            ..self.train.clone()
        }
    }

    fn model(&self, mode: Mode, widths: &[usize], taxonomy: &Taxonomy) -> ModelConfig {
        ModelConfig {
            backbone: Backbone::R18,
            mode,
            frames: self.corpus.frames,
            input_size: self.corpus.height,
            stage_channels: widths.to_vec(),
            head_mode: HeadMode::Single,
            label_categories: taxonomy.categories(),
            merge_norm: true,
        }
    }
}

/// Small-batch SGD; the learning rate drops tenfold at each milestone epoch.
fn desk_train(epochs: usize, lr: f64, milestones: &[usize]) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        lr,
        schedule: Some(StepSchedule {
            milestones: milestones.to_vec(),
            factor: 0.1,
        }),
        ..TrainConfig::default()
    }
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Mean AP over the labels selected by `keep`, ignoring undefined ones.
fn mean_ap(report: &MapReport, keep: impl Fn(usize) -> bool) -> Option<f64> {
    let v: Vec<f64> = report
        .per_label
        .iter()
        .filter(|(l, _)| keep(*l))
        .filter_map(|(_, ap)| *ap)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn required(v: Option<f64>, what: &str) -> Result<f64> {
    v.ok_or_else(|| Error::Config(format!("{what} is undefined: the validation split has no positives")))
}

/// Scores of one trained model on the validation split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValScores {
    pub map: f64,
    /// Mean AP over appearance (static) labels.
    pub static_ap: f64,
    /// Mean AP over motion (dynamic) labels.
    pub dynamic_ap: f64,
}

fn val_scores(net: &Network, corpus: &SyntheticCorpus, cfg: &TrainConfig) -> Result<ValScores> {
    let val = corpus.manifest().split(Split::Val);
    let ev = evaluate(net, &val, corpus, corpus.taxonomy(), cfg)?;
    let spec = corpus.spec();
    Ok(ValScores {
        map: required(ev.report.overall, "validation mAP")?,
        static_ap: required(mean_ap(&ev.report, |l| spec.is_static(l)), "static AP")?,
        dynamic_ap: required(mean_ap(&ev.report, |l| !spec.is_static(l)), "dynamic AP")?,
    })
}

fn fit_scratch(setup: &Setup, mode: Mode, widths: &[usize], seed: u64) -> Result<(Network, SyntheticCorpus)> {
    let corpus = setup.corpus_for(seed)?;
    let cfg = setup.train_for(seed);
    let train_records = corpus.manifest().split(Split::Train);
    let data = TrainData {
        taxonomy: corpus.taxonomy(),
        train: &train_records,
        val: &[],
        source: &corpus,
    };
    let model = setup.model(mode, widths, corpus.taxonomy());
    let out = train(model, &cfg, data, &mut |_, _| EpochControl::Continue)?;
    Ok((out.network, corpus))
}

/// Parameter count of a network with the given widths.
pub fn param_count(mode: Mode, widths: &[usize], taxonomy: &Taxonomy, frames: usize, input_size: usize) -> Result<usize> {
    let cfg = ModelConfig {
        backbone: Backbone::R18,
        mode,
        frames,
        input_size,
        stage_channels: widths.to_vec(),
        head_mode: HeadMode::Single,
        label_categories: taxonomy.categories(),
        merge_norm: true,
    };
    Ok(Network::new(cfg, 0)?.num_params())
}

/// Widens `base` uniformly until the parameter count of `mode` is as close
/// as possible to `target`.
pub fn matched_widths(
    mode: Mode,
    base: &[usize],
    target: usize,
    taxonomy: &Taxonomy,
    frames: usize,
    input_size: usize,
) -> Result<Vec<usize>> {
    let mut best = (usize::MAX, base.to_vec());
    for step in 0..=60 {
        let f = 1.0 + step as f64 * 0.05;
        let widths: Vec<usize> = base.iter().map(|&w| ((w as f64 * f).round() as usize).max(1)).collect();
        let n = param_count(mode, &widths, taxonomy, frames, input_size)?;
        let gap = n.abs_diff(target);
        if gap < best.0 {
            best = (gap, widths);
        }
        if n > target {
            break;
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeBudget {
    pub stage_channels: Vec<usize>,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRun {
    pub seed: u64,
    pub hatnet: ValScores,
    pub branch2d_only: ValScores,
    pub branch3d_only: ValScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub setup: Setup,
    pub budgets: BTreeMap<String, ModeBudget>,
    pub runs: Vec<FusionRun>,
    /// Median validation mAP per mode.
    pub median_map: BTreeMap<String, f64>,
}

impl FusionReport {
    pub fn hatnet_not_worse(&self) -> bool {
        let m = &self.median_map;
        m["hatnet"] >= m["branch2d_only"] && m["hatnet"] >= m["branch3d_only"]
    }
}

pub fn fusion_setup() -> Setup {
    Setup {
        corpus: SyntheticSpec {
            n_train: 128,
            n_val: 64,
            n_test: 0,
            ..SyntheticSpec::default()
        },
        stage_channels: vec![8, 16, 16, 16],
        train: desk_train(24, 0.05, &[18]),
    }
}

const FUSION_MODES: [(Mode, &str); 3] = [
    (Mode::Hatnet, "hatnet"),
    (Mode::Branch2dOnly, "branch2d_only"),
    (Mode::Branch3dOnly, "branch3d_only"),
];

/// HATNet against each single branch, the single branches widened to the
/// parameter count of HATNet.
pub fn fusion(setup: &Setup, seeds: &[u64], log: &mut dyn FnMut(&str)) -> Result<FusionReport> {
    let probe = setup.corpus_for(0)?;
    let (frames, size) = (setup.corpus.frames, setup.corpus.height);
    let tax = probe.taxonomy();
    let target = param_count(Mode::Hatnet, &setup.stage_channels, tax, frames, size)?;
    let mut budgets = BTreeMap::new();
    for (mode, name) in FUSION_MODES {
        let widths = if mode == Mode::Hatnet {
            setup.stage_channels.clone()
        } else {
            matched_widths(mode, &setup.stage_channels, target, tax, frames, size)?
        };
        let params = param_count(mode, &widths, tax, frames, size)?;
        budgets.insert(
            name.to_string(),
            ModeBudget {
                stage_channels: widths,
                params,
            },
        );
    }
    let mut runs = Vec::new();
    for &seed in seeds {
        let mut scores = Vec::new();
        for (mode, name) in FUSION_MODES {
            let t0 = Instant::now();
            let (net, corpus) = fit_scratch(setup, mode, &budgets[name].stage_channels, seed)?;
            let s = val_scores(&net, &corpus, &setup.train)?;
            log(&format!(
                "fusion seed {seed} {name}: val mAP {:.4} (static {:.4}, dynamic {:.4}) in {:.0}s",
                s.map,
                s.static_ap,
                s.dynamic_ap,
                t0.elapsed().as_secs_f64()
            ));
            scores.push(s);
        }
        runs.push(FusionRun {
            seed,
            hatnet: scores[0],
            branch2d_only: scores[1],
            branch3d_only: scores[2],
        });
    }
    let mut median_map = BTreeMap::new();
    median_map.insert("hatnet".into(), median(&runs.iter().map(|r| r.hatnet.map).collect::<Vec<_>>()));
    median_map.insert(
        "branch2d_only".into(),
        median(&runs.iter().map(|r| r.branch2d_only.map).collect::<Vec<_>>()),
    );
    median_map.insert(
        "branch3d_only".into(),
        median(&runs.iter().map(|r| r.branch3d_only.map).collect::<Vec<_>>()),
    );
    Ok(FusionReport {
        setup: setup.clone(),
        budgets,
        runs,
        median_map,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalRun {
    pub seed: u64,
    pub action_only: f64,
    pub action_static: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalReport {
    pub setup: Setup,
    pub runs: Vec<IncrementalRun>,
    /// Median action-category validation mAP.
    pub median_action_only: f64,
    pub median_action_static: f64,
}

pub fn incremental_setup() -> Setup {
    fusion_setup()
}

/// Action-category validation mAP when training on action labels alone
/// versus action plus the four static categories.
pub fn incremental(setup: &Setup, seeds: &[u64], log: &mut dyn FnMut(&str)) -> Result<IncrementalReport> {
    let action_only = vec![Category::Action];
    let action_static = vec![
        Category::Scene,
        Category::Object,
        Category::Action,
        Category::Attribute,
        Category::Concept,
    ];
    let mut runs = Vec::new();
    for &seed in seeds {
        let mut values = Vec::new();
        for active in [&action_only, &action_static] {
            let t0 = Instant::now();
            let s = Setup {
                train: TrainConfig {
                    active_categories: active.clone(),
                    ..setup.train.clone()
                },
                ..setup.clone()
            };
            let (net, corpus) = fit_scratch(&s, Mode::Hatnet, &s.stage_channels, seed)?;
            let val = corpus.manifest().split(Split::Val);
            let ev = evaluate(&net, &val, &corpus, corpus.taxonomy(), &s.train)?;
            let v = required(ev.report.category(Category::Action), "action mAP")?;
            log(&format!(
                "incremental seed {seed} {} categories: action mAP {v:.4} in {:.0}s",
                active.len(),
                t0.elapsed().as_secs_f64()
            ));
            values.push(v);
        }
        runs.push(IncrementalRun {
            seed,
            action_only: values[0],
            action_static: values[1],
        });
    }
    Ok(IncrementalReport {
        setup: setup.clone(),
        median_action_only: median(&runs.iter().map(|r| r.action_only).collect::<Vec<_>>()),
        median_action_static: median(&runs.iter().map(|r| r.action_static).collect::<Vec<_>>()),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSetup {
    pub source: Setup,
    /// Small target corpus; its train budget applies to both arms.
    pub target: Setup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRun {
    pub seed: u64,
    pub finetuned: f64,
    pub scratch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub setup: TransferSetup,
    pub runs: Vec<TransferRun>,
    pub median_finetuned: f64,
    pub median_scratch: f64,
}

pub fn transfer_setup() -> TransferSetup {
    let base = fusion_setup();
    TransferSetup {
        source: base.clone(),
        target: Setup {
            corpus: SyntheticSpec {
                n_train: 16,
                n_val: 32,
                n_test: 0,
                static_labels: 2,
                dynamic_labels: 2,
                ..SyntheticSpec::default()
            },
            stage_channels: base.stage_channels,
            train: desk_train(8, 0.05, &[]),
        },
    }
}

/// Pretrain on the source corpus, then fine-tune on a small target corpus
/// with fresh heads; compare with training on the target alone for the
/// same number of epochs.
pub fn transfer(setup: &TransferSetup, seeds: &[u64], log: &mut dyn FnMut(&str)) -> Result<TransferReport> {
    let mut runs = Vec::new();
    for &seed in seeds {
        let t0 = Instant::now();
        let (source_net, _) = fit_scratch(&setup.source, Mode::Hatnet, &setup.source.stage_channels, seed)?;
        let ck = Checkpoint::from_network(&source_net, "", 0);
        // The target corpus gets its own stream so it never shares videos
        // with the source.
        let target_seed = mix(seed, 0x7a29e7);
        let corpus = setup.target.corpus_for(target_seed)?;
        let cfg = setup.target.train_for(seed);
        let train_records = corpus.manifest().split(Split::Train);
        let data = TrainData {
            taxonomy: corpus.taxonomy(),
            train: &train_records,
            val: &[],
            source: &corpus,
        };
        let tuned = finetune(&ck, &cfg, data, &mut |_, _| EpochControl::Continue)?.network;
        let model = setup.target.model(Mode::Hatnet, &setup.target.stage_channels, corpus.taxonomy());
        let scratch = train(model, &cfg, data, &mut |_, _| EpochControl::Continue)?.network;
        let finetuned = val_scores(&tuned, &corpus, &cfg)?.map;
        let scratch = val_scores(&scratch, &corpus, &cfg)?.map;
        log(&format!(
            "transfer seed {seed}: finetuned {finetuned:.4}, scratch {scratch:.4} in {:.0}s",
            t0.elapsed().as_secs_f64()
        ));
        runs.push(TransferRun {
            seed,
            finetuned,
            scratch,
        });
    }
    Ok(TransferReport {
        setup: setup.clone(),
        median_finetuned: median(&runs.iter().map(|r| r.finetuned).collect::<Vec<_>>()),
        median_scratch: median(&runs.iter().map(|r| r.scratch).collect::<Vec<_>>()),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSetup {
    pub train: Setup,
    /// Clips per dynamic label in the clustering set.
    pub clips_per_label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringRun {
    pub seed: u64,
    pub trained: f64,
    pub random: f64,
    pub trained_inertia: f64,
    pub random_inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringReport {
    pub setup: ClusteringSetup,
    pub k: usize,
    pub runs: Vec<ClusteringRun>,
    pub median_trained: f64,
    pub median_random: f64,
}

pub fn clustering_setup() -> ClusteringSetup {
    ClusteringSetup {
        train: fusion_setup(),
        clips_per_label: 16,
    }
}

/// Clips carrying exactly one dynamic label each (and no static label),
/// with that label's index as the class.
fn motion_set(corpus: &SyntheticCorpus, per_label: usize) -> (ClipCache, Vec<String>, Vec<usize>) {
    let spec = corpus.spec();
    let mut cache = ClipCache::default();
    let (mut ids, mut classes) = (Vec::new(), Vec::new());
    for i in 0..per_label {
        for d in 0..spec.dynamic_labels {
            let id = format!("motion-{d:02}-{i:04}");
            let clip = corpus.render_labels(&[spec.static_labels + d], mix(0xc1u64, (d * per_label + i) as u64));
            cache.insert(id.clone(), clip);
            ids.push(id);
            classes.push(d);
        }
    }
    (cache, ids, classes)
}

fn cluster_score(net: &Network, source: &dyn ClipSource, ids: &[String], classes: &[usize], k: usize, seed: u64) -> Result<(f64, f64)> {
    let records: Vec<_> = ids
        .iter()
        .map(|id| holivid_core::dataset::AnnotationRecord {
            video_id: id.clone(),
            split: Split::Test,
            labels: vec![0],
            confidences: None,
        })
        .collect();
    let refs: Vec<_> = records.iter().collect();
    let feats = extract_features(net, &refs, source, 8)?;
    let km = kmeans(&feats, k, seed)?;
    Ok((clustering_accuracy(&km.assignments, classes, k)?, km.inertia))
}

/// k-means on trunk features of motion-only clips, from a trained network
/// and from the same architecture at initialisation.
pub fn clustering(setup: &ClusteringSetup, seeds: &[u64], log: &mut dyn FnMut(&str)) -> Result<ClusteringReport> {
    let k = setup.train.corpus.dynamic_labels;
    let mut runs = Vec::new();
    for &seed in seeds {
        let t0 = Instant::now();
        let (trained, corpus) = fit_scratch(&setup.train, Mode::Hatnet, &setup.train.stage_channels, seed)?;
        let random = Network::new(trained.config().clone(), setup.train.train_for(seed).seed)?;
        let (cache, ids, classes) = motion_set(&corpus, setup.clips_per_label);
        let (ta, ti) = cluster_score(&trained, &cache, &ids, &classes, k, seed)?;
        let (ra, ri) = cluster_score(&random, &cache, &ids, &classes, k, seed)?;
        log(&format!(
            "clustering seed {seed}: trained {ta:.4}, random {ra:.4} in {:.0}s",
            t0.elapsed().as_secs_f64()
        ));
        runs.push(ClusteringRun {
            seed,
            trained: ta,
            random: ra,
            trained_inertia: ti,
            random_inertia: ri,
        });
    }
    Ok(ClusteringReport {
        setup: setup.clone(),
        k,
        median_trained: median(&runs.iter().map(|r| r.trained).collect::<Vec<_>>()),
        median_random: median(&runs.iter().map(|r| r.random).collect::<Vec<_>>()),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitSetup {
    pub setup: Setup,
    /// Epochs between train-set evaluations.
    pub check_every: usize,
    pub target_map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    pub setup: OverfitSetup,
    /// `(epochs completed, train mAP)` at every check.
    pub checks: Vec<(usize, f64)>,
    pub epochs_run: usize,
    pub final_train_map: f64,
    pub seconds: f64,
}

impl OverfitReport {
    pub fn reached(&self) -> bool {
        self.final_train_map >= self.setup.target_map
    }
}

pub fn overfit_setup() -> OverfitSetup {
    OverfitSetup {
        setup: Setup {
            corpus: SyntheticSpec {
                n_train: 64,
                n_val: 0,
                n_test: 0,
                ..SyntheticSpec::default()
            },
            stage_channels: vec![8, 16, 16, 16],
            train: desk_train(200, 0.1, &[]),
        },
        check_every: 5,
        target_map: 0.95,
    }
}

/// Trains on the training split until its own mAP reaches the target or
/// the epoch budget runs out.
pub fn overfit(setup: &OverfitSetup, seed: u64, log: &mut dyn FnMut(&str)) -> Result<OverfitReport> {
    let t0 = Instant::now();
    let s = &setup.setup;
    let corpus = s.corpus_for(seed)?;
    let cfg = s.train_for(seed);
    let train_records = corpus.manifest().split(Split::Train);
    let data = TrainData {
        taxonomy: corpus.taxonomy(),
        train: &train_records,
        val: &[],
        source: &corpus,
    };
    let model = s.model(Mode::Hatnet, &s.stage_channels, corpus.taxonomy());
    let mut checks = Vec::new();
    let mut failure = None;
    let every = setup.check_every.max(1);
    let out = train(model, &cfg, data, &mut |r, net| {
        let done = r.epoch + 1;
        if done % every != 0 && done != cfg.epochs {
            return EpochControl::Continue;
        }
        match evaluate(net, &train_records, &corpus, corpus.taxonomy(), &cfg) {
            Ok(ev) => {
                let m = ev.report.overall.unwrap_or(0.0);
                log(&format!(
                    "overfit epoch {done}: loss {:.4}, train mAP {m:.4}, {:.0}s",
                    r.train_loss,
                    t0.elapsed().as_secs_f64()
                ));
                checks.push((done, m));
                if m >= setup.target_map {
                    EpochControl::Stop
                } else {
                    EpochControl::Continue
                }
            }
            Err(e) => {
                failure = Some(e);
                EpochControl::Stop
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(OverfitReport {
        setup: setup.clone(),
        epochs_run: out.history.len(),
        final_train_map: checks.last().map_or(0.0, |c| c.1),
        checks,
        seconds: t0.elapsed().as_secs_f64(),
    })
}
