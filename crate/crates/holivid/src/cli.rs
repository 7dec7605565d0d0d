//! The `holivid` command line.
//!
//! Exit status: 0 on success, 1 for invalid input (bad flags, configs or
//! files), 2 for failures while running (IO errors, diverging training).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use holivid_core::dataset::{AnnotationRecord, Split, SyntheticSpec};
use holivid_core::kmeans::kmeans;
use holivid_core::metrics::{clustering_accuracy, map_report};
use holivid_core::taxonomy::{category_stats, prune_by_min_samples, Category, Taxonomy};
use holivid_core::train::{evaluate, extract_features, finetune, train, Checkpoint, EpochControl, TrainData};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{defaults_help, DataSection, RunConfig};
use crate::data::{clip_path, Dataset, MANIFEST_FILE, TAXONOMY_FILE};
use crate::error::{Error, Result};
use crate::experiments;
use crate::io::checkpoint::{load_checkpoint, save_checkpoint};
use crate::io::manifest::{load_manifest, save_manifest};
use crate::io::predictions::{load_predictions, prediction_lines, prediction_matrix, save_predictions};
use crate::io::taxonomy::{load_taxonomy, save_taxonomy};
use crate::io::tensor::{load_tensor, save_tensor};
use crate::io::{read_string, to_jsonl, to_sorted_json, write_atomic};

/// Environment variable that requests deterministic execution. Every
/// command is single-threaded and seeded, so runs are always reproducible;
/// the variable is accepted for compatibility with scripted pipelines.
pub const DETERMINISTIC_ENV: &str = "HOLIVID_DETERMINISTIC";

pub const CHECKPOINT_FILE: &str = "checkpoint.hvckpt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "holivid", version, about = "Holistic video understanding: taxonomy tools, synthetic data, training, evaluation and clustering")]
pub struct Cli {
    /// Seed overriding every configured seed (corpus, initialisation,
    /// batch order, k-means).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inspect or prune a label taxonomy.
    #[command(subcommand)]
    Taxonomy(TaxonomyCommand),
    /// Generate or export the synthetic corpus.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train (or fine-tune) a network from a run config.
    #[command(after_help = defaults_help())]
    Train(TrainArgs),
    /// Score a predictions file against a manifest. Uses no model code.
    Eval(EvalArgs),
    /// Write per-video label scores of a checkpoint.
    Predict(PredictArgs),
    /// Write pooled trunk features of a checkpoint.
    Features(FeaturesArgs),
    /// Run k-means on a feature file.
    Cluster(ClusterArgs),
    /// Run a multi-seed experiment and report per-seed values and medians.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Subcommand)]
pub enum TaxonomyCommand {
    /// Per-category label, annotation and video counts as JSON.
    Stats {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drop labels with fewer training videos than `--min-samples`.
    Prune {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        min_samples: usize,
        /// Directory receiving taxonomy.csv and manifest.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Write spec.json, taxonomy.csv and manifest.jsonl for a synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Corpus spec JSON; defaults are used for missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Render clips of a dataset directory as flat binary tensors.
    Export {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config JSON (sections: model, train, data, paths).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `paths.out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fine-tune from this checkpoint's trunk instead of starting fresh.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Flat binary `(N, D)` tensor; rows follow manifest order of the split.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Dataset whose split rows the features were extracted from; enables
    /// the accuracy score, with each video's class being its lowest action
    /// or event label.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExperimentKind {
    Fusion,
    Incremental,
    Transfer,
    Clustering,
    Overfit,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub kind: ExperimentKind,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// Setup JSON replacing the built-in one (see `--print-setup`).
    #[arg(long)]
    pub setup: Option<PathBuf>,
    /// Print the setup that would be used and exit.
    #[arg(long)]
    pub print_setup: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Messages go to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Taxonomy(TaxonomyCommand::Stats { taxonomy, manifest, out }) => {
            let tax = load_taxonomy(&taxonomy)?.taxonomy;
            let manifest = load_manifest(&manifest)?;
            emit(out.as_deref(), &stats_json(&tax, &manifest)?)
        }
        Command::Taxonomy(TaxonomyCommand::Prune {
            taxonomy,
            manifest,
            min_samples,
            out,
        }) => {
            let tax = load_taxonomy(&taxonomy)?.taxonomy;
            let manifest = load_manifest(&manifest)?;
            let (tax2, manifest2) = prune_by_min_samples(&tax, &manifest, min_samples)?;
            save_taxonomy(&out.join(TAXONOMY_FILE), &tax2)?;
            save_manifest(&out.join(MANIFEST_FILE), &manifest2)?;
            eprintln!(
                "kept {} of {} labels and {} of {} videos",
                tax2.len(),
                tax.len(),
                manifest2.len(),
                manifest.len()
            );
            Ok(())
        }
        Command::Dataset(DatasetCommand::Synth { out, spec }) => {
            let mut spec: SyntheticSpec = match spec {
                Some(p) => serde_json::from_str(&read_string(&p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
                None => SyntheticSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            Dataset::synthetic(spec)?.save_dir(&out)
        }
        Command::Dataset(DatasetCommand::Export { data, out, split }) => {
            let ds = Dataset::load_dir(&data)?;
            let records: Vec<&AnnotationRecord> = match split {
                Some(s) => ds.split(s.into()),
                None => ds.manifest.records().iter().collect(),
            };
            for r in &records {
                save_tensor(&clip_path(&out, &r.video_id), &ds.corpus.render(&r.video_id)?)?;
            }
            eprintln!("wrote {} clips to {}", records.len(), out.display());
            Ok(())
        }
        Command::Train(args) => cmd_train(args, seed),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Features(args) => cmd_features(args),
        Command::Cluster(args) => cmd_cluster(args, seed),
        Command::Experiment(args) => cmd_experiment(args, seed),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn stats_json(tax: &Taxonomy, manifest: &holivid_core::dataset::Manifest) -> Result<String> {
    let stats = category_stats(tax, manifest)?;
    let mut obj = BTreeMap::new();
    for c in Category::ALL {
        obj.insert(c.as_str().to_string(), serde_json::to_value(stats.get(c)).expect("plain struct"));
    }
    obj.insert(
        "total".into(),
        json!({
            "label_count": stats.total_labels,
            "annotation_count": stats.total_annotations,
            "video_count": stats.total_videos,
            "annotations_per_label": stats.annotations_per_label,
        }),
    );
    Ok(to_sorted_json(&obj))
}

fn cmd_train(args: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
        if let DataSection::Synthetic(spec) = &mut cfg.data {
            spec.seed = s;
        }
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.paths.out.clone());
    let ds = Dataset::from_section(&cfg.data)?;
    let train_records = ds.split(Split::Train);
    let val_records = ds.split(Split::Val);
    let data = TrainData {
        taxonomy: &ds.taxonomy,
        train: &train_records,
        val: &val_records,
        source: &ds,
    };
    let mut progress = |r: &holivid_core::train::EpochRecord, _: &holivid_core::model::Network| {
        let val = r.val_map.map_or("n/a".to_string(), |m| format!("{m:.4}"));
        eprintln!("epoch {}: train loss {:.4}, val mAP {val}", r.epoch, r.train_loss);
        EpochControl::Continue
    };
    let outcome = match &args.init {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            finetune(&ck, &cfg.train, data, &mut progress)?
        }
        None => {
            let model = cfg.model.resolve(&ds.taxonomy, ds.frames(), ds.input_size());
            train(model, &cfg.train, data, &mut progress)?
        }
    };
    let ck = Checkpoint::from_network(&outcome.network, &ds.fingerprint, outcome.steps);
    write_atomic(&out.join(CONFIG_FILE), cfg.resolved_json().as_bytes())?;
    write_atomic(&out.join(HISTORY_FILE), to_jsonl(&outcome.history).as_bytes())?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &ck)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// MapReport as written by `eval`.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub videos: usize,
    pub overall: Option<f64>,
    pub per_category: BTreeMap<String, Option<f64>>,
    pub per_label: Vec<LabelAp>,
    /// Labels without any positive among the evaluated videos.
    pub excluded_labels: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LabelAp {
    pub label_id: usize,
    pub name: String,
    pub category: String,
    pub ap: Option<f64>,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let tax = load_taxonomy(&args.taxonomy)?.taxonomy;
    let manifest = load_manifest(&args.manifest)?;
    tax.check_manifest(&manifest).map_err(|e| Error::format(&args.manifest, e))?;
    let lines = load_predictions(&args.predictions)?;
    let pred = prediction_matrix(&args.predictions, &lines, &manifest, tax.len())?;
    let report = map_report(&pred, &tax)?;
    let out = EvalReport {
        videos: pred.video_ids.len(),
        overall: report.overall,
        per_category: Category::ALL
            .iter()
            .map(|&c| (c.as_str().to_string(), report.category(c)))
            .collect(),
        per_label: report
            .per_label
            .iter()
            .map(|&(id, ap)| {
                let l = &tax.labels()[id];
                LabelAp {
                    label_id: id,
                    name: l.name.clone(),
                    category: l.category.as_str().into(),
                    ap,
                }
            })
            .collect(),
        excluded_labels: report.excluded_labels.clone(),
    };
    emit(args.out.as_deref(), &to_sorted_json(&out))
}

fn warn_on_fingerprint(ck: &Checkpoint, ds: &Dataset) {
    if ck.fingerprint != ds.fingerprint {
        eprintln!("warning: the checkpoint was trained against a different taxonomy (fingerprint mismatch)");
    }
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let ds = Dataset::load_dir(&args.data)?;
    if ck.config.label_categories != ds.taxonomy.categories() {
        return Err(Error::Config(format!(
            "the checkpoint predicts {} labels but the dataset taxonomy has {}",
            ck.config.n_labels(),
            ds.taxonomy.len()
        )));
    }
    warn_on_fingerprint(&ck, &ds);
    let net = ck.to_network()?;
    let records = ds.split(args.split.into());
    let ev = evaluate(&net, &records, &ds, &ds.taxonomy, &Default::default())?;
    save_predictions(&args.out, &prediction_lines(&ev.predictions.video_ids, &ev.predictions.scores))
}

fn cmd_features(args: FeaturesArgs) -> Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let ds = Dataset::load_dir(&args.data)?;
    warn_on_fingerprint(&ck, &ds);
    let net = ck.to_network()?;
    let records = ds.split(args.split.into());
    let feats = extract_features(&net, &records, &ds, 8)?;
    save_tensor(&args.out, &feats)
}

/// Class of a video for clustering: its lowest action or event label.
fn motion_class(tax: &Taxonomy, r: &AnnotationRecord) -> Result<usize> {
    r.labels
        .iter()
        .copied()
        .filter(|&l| matches!(tax.category_of(l), Some(Category::Action | Category::Event)))
        .min()
        .ok_or_else(|| Error::Config(format!("video {} has no action or event label to cluster by", r.video_id)))
}

fn cmd_cluster(args: ClusterArgs, seed: Option<u64>) -> Result<()> {
    let feats = load_tensor(&args.features)?;
    let feats = if feats.ndim() == 2 {
        feats
    } else {
        let n = feats.dim(0);
        let d = feats.len() / n.max(1);
        feats.reshape(&[n, d])?
    };
    let km = kmeans(&feats, args.k, seed.unwrap_or(0))?;
    let accuracy = match &args.data {
        None => Value::Null,
        Some(dir) => {
            let ds = Dataset::load_dir(dir)?;
            let records = ds.split(args.split.into());
            if records.len() != feats.dim(0) {
                return Err(Error::Config(format!(
                    "{} has {} rows but the {} split has {} videos",
                    args.features.display(),
                    feats.dim(0),
                    Split::from(args.split).as_str(),
                    records.len()
                )));
            }
            let mut ids = BTreeMap::new();
            let classes = records
                .iter()
                .map(|r| {
                    let c = motion_class(&ds.taxonomy, r)?;
                    let n = ids.len();
                    Ok(*ids.entry(c).or_insert(n))
                })
                .collect::<Result<Vec<_>>>()?;
            let k = args.k.max(ids.len());
            json!(clustering_accuracy(&km.assignments, &classes, k)?)
        }
    };
    let report = json!({ "k": args.k, "inertia": km.inertia, "accuracy": accuracy });
    emit(args.out.as_deref(), &to_sorted_json(&report))
}

fn load_setup<T: serde::de::DeserializeOwned>(path: &Option<PathBuf>, default: T) -> Result<T> {
    match path {
        None => Ok(default),
        Some(p) => serde_json::from_str(&read_string(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
    }
}

fn cmd_experiment(args: ExperimentArgs, seed: Option<u64>) -> Result<()> {
    let seeds = match seed {
        Some(s) => vec![s],
        None => args.seeds.clone(),
    };
    if seeds.is_empty() {
        return Err(Error::Usage("at least one seed is required".into()));
    }
    let mut log = |m: &str| eprintln!("{m}");
    let text = match args.kind {
        ExperimentKind::Fusion => {
            let s = load_setup(&args.setup, experiments::fusion_setup())?;
            if args.print_setup {
                return emit(None, &to_sorted_json(&s));
            }
            to_sorted_json(&experiments::fusion(&s, &seeds, &mut log)?)
        }
        ExperimentKind::Incremental => {
            let s = load_setup(&args.setup, experiments::incremental_setup())?;
            if args.print_setup {
                return emit(None, &to_sorted_json(&s));
            }
            to_sorted_json(&experiments::incremental(&s, &seeds, &mut log)?)
        }
        ExperimentKind::Transfer => {
            let s = load_setup(&args.setup, experiments::transfer_setup())?;
            if args.print_setup {
                return emit(None, &to_sorted_json(&s));
            }
            to_sorted_json(&experiments::transfer(&s, &seeds, &mut log)?)
        }
        ExperimentKind::Clustering => {
            let s = load_setup(&args.setup, experiments::clustering_setup())?;
            if args.print_setup {
                return emit(None, &to_sorted_json(&s));
            }
            to_sorted_json(&experiments::clustering(&s, &seeds, &mut log)?)
        }
        ExperimentKind::Overfit => {
            let s = load_setup(&args.setup, experiments::overfit_setup())?;
            if args.print_setup {
                return emit(None, &to_sorted_json(&s));
            }
            let reports = seeds
                .iter()
                .map(|&sd| experiments::overfit(&s, sd, &mut log))
                .collect::<Result<Vec<_>>>()?;
            to_sorted_json(&reports)
        }
    };
    emit(args.out.as_deref(), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_with_one_and_help_with_zero() {
        assert_eq!(main_with_args(["holivid", "frobnicate"]), 1);
        assert_eq!(main_with_args(["holivid", "eval", "--bogus"]), 1);
        assert_eq!(main_with_args(["holivid", "--help"]), 0);
    }

    #[test]
    fn missing_input_file_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.csv");
        let code = main_with_args([
            "holivid".as_ref(),
            "taxonomy".as_ref(),
            "stats".as_ref(),
            "--taxonomy".as_ref(),
            missing.as_os_str(),
            "--manifest".as_ref(),
            missing.as_os_str(),
        ]);
        assert_eq!(code, 1);
    }
}
