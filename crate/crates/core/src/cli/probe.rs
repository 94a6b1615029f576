use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::Serialize;

use super::{digest_input, usage, write_text, CliResult, RunConfig};
use crate::embedding::{fit_normalizer, read_embeddings, EmbeddingSet, NormalizationStats, DEFAULT_EPSILON};
use crate::error::Error;
use crate::harness::{DatasetManifest, ManifestItem, Split};
use crate::metrics::{evaluate, Fixed6, MetricKind};
use crate::probe::{read_model, train_probe, write_model, LabeledSet, ProbeModel, TaskKind, TrainConfig};

#[derive(Debug, Subcommand)]
pub enum ProbeCommand {
    /// Fit a probe on the manifest's training items, selecting on its
    /// validation items when present.
    Train(TrainArgs),
    /// Score embeddings with a trained probe.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Must agree with the manifest when given.
    #[arg(long)]
    pub task: Option<TaskKind>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// 0 trains on the full batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Validation metric for epoch selection.
    #[arg(long)]
    pub metric: Option<MetricKind>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Directory written by `probe train`, or the model file inside it.
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// With a manifest, predicted items are scored against their labels.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Only items of this manifest split.
    #[arg(long)]
    pub split: Option<String>,
    /// Metrics to report (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub metric: Vec<MetricKind>,
}

pub(crate) struct Dataset {
    pub manifest: DatasetManifest,
    pub embeddings: EmbeddingSet,
    pub inputs: BTreeMap<String, String>,
}

/// Loads and cross-checks the manifest and embedding set named by `args`.
pub(crate) fn load_dataset(rc: &mut RunConfig, args: DataArgs) -> CliResult<Dataset> {
    let manifest_path = rc.require_path("manifest", args.manifest)?;
    let embeddings_path = rc.require_path("embeddings", args.embeddings)?;
    let task = rc.take("task", args.task)?;
    let manifest = DatasetManifest::read(&manifest_path)?;
    if let Some(t) = task {
        if t != manifest.task() {
            return Err(usage(format!("--task {t} but the manifest describes a {} task", manifest.task())));
        }
    }
    let embeddings = read_embeddings(&embeddings_path)?;
    let mut inputs = BTreeMap::new();
    digest_input(&mut inputs, "manifest", &manifest_path)?;
    digest_input(&mut inputs, "embeddings", &embeddings_path)?;
    Ok(Dataset {
        manifest,
        embeddings,
        inputs,
    })
}

fn parse_split(s: &str) -> CliResult<Split> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| usage(format!("unknown split `{s}`; expected train, val or test")))
}

fn items_in(m: &DatasetManifest, keep: impl Fn(Option<Split>) -> bool) -> Vec<&ManifestItem> {
    m.items.iter().filter(|i| keep(i.split)).collect()
}

#[derive(Serialize)]
struct TrainReport<'a> {
    task: TaskKind,
    classes: &'a [String],
    selection: String,
    best_epoch: usize,
    val_metric: Option<Fixed6>,
    n_train: usize,
    n_val: usize,
    losses: Vec<Fixed6>,
}

pub fn run_train(rc: &mut RunConfig, args: TrainArgs) -> CliResult<()> {
    let defaults = TrainConfig::default();
    let mut cfg = TrainConfig {
        max_epochs: rc.take_or("epochs", args.epochs, defaults.max_epochs)?,
        learning_rate: rc.take_or("learning-rate", args.learning_rate, defaults.learning_rate)?,
        l2_lambda: rc.take_or("l2", args.l2, defaults.l2_lambda)?,
        momentum: rc.take_or("momentum", args.momentum, defaults.momentum)?,
        batch_size: rc.take_or("batch-size", args.batch_size, defaults.batch_size)?,
        early_stop_patience: rc.take_or("patience", args.patience, defaults.early_stop_patience)?,
        selection: rc.take("metric", args.metric)?,
        ..defaults
    };
    cfg.seed = rc.seed;
    cfg.validate()?;
    let data = load_dataset(rc, args.data)?;
    rc.finish()?;

    let m = &data.manifest;
    let train_items = items_in(m, |s| matches!(s, None | Some(Split::Train)));
    let val_items = items_in(m, |s| s == Some(Split::Val));
    if train_items.is_empty() {
        return Err(usage("the manifest has no training items"));
    }
    let raw_train = m.labeled_set(&train_items, &data.embeddings)?;
    let stats = fit_normalizer(&raw_train.embeddings, DEFAULT_EPSILON)?;
    let train = LabeledSet::new(stats.normalize_set(&raw_train.embeddings)?, raw_train.labels)?;
    let raw_val = m.labeled_set(&val_items, &data.embeddings)?;
    let val = LabeledSet::new(stats.normalize_set(&raw_val.embeddings)?, raw_val.labels)?;

    let trained = train_probe(&train, Some(&val), m.task(), m.class_names(), &cfg)?;

    rc.create_out()?;
    write_model(&trained.model, &rc.out.join("model.aprb"))?;
    let mut text = serde_json::to_string_pretty(&stats).map_err(Error::from)?;
    text.push('\n');
    write_text(&rc.out, "normalizer.json", &text)?;

    let report = TrainReport {
        task: m.task(),
        classes: m.class_names(),
        selection: trained.selection.to_string(),
        best_epoch: trained.best_epoch,
        val_metric: trained.best_metric.map(Fixed6),
        n_train: train.len(),
        n_val: val.len(),
        losses: trained.losses.iter().copied().map(Fixed6).collect(),
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    text.push('\n');
    write_text(&rc.out, "train_report.json", &text)?;
    rc.write_provenance(&data.inputs, None::<()>)?;

    match trained.best_metric {
        Some(v) => println!("epoch {} selected, validation {} {v:.6}", trained.best_epoch, trained.selection),
        None => println!("trained {} epochs without validation data", trained.best_epoch),
    }
    Ok(())
}

pub(crate) fn model_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join("model.aprb"), path.join("normalizer.json"))
    } else {
        let dir = path.parent().unwrap_or(Path::new("."));
        (path.to_path_buf(), dir.join("normalizer.json"))
    }
}

/// Loads a probe and the normalizer stored next to it.
pub(crate) fn load_model(path: &Path) -> CliResult<(ProbeModel, Option<NormalizationStats>)> {
    let (model_path, norm_path) = model_paths(path);
    if !model_path.is_file() {
        return Err(usage(format!("no model at {}", model_path.display())));
    }
    let model = read_model(&model_path)?;
    let stats = if norm_path.is_file() {
        let stats: NormalizationStats = serde_json::from_str(&fs::read_to_string(&norm_path)?).map_err(Error::from)?;
        if stats.dim() != model.dim() {
            return Err(Error::DimMismatch {
                expected: model.dim(),
                found: stats.dim(),
            }
            .into());
        }
        Some(stats)
    } else {
        None
    };
    Ok((model, stats))
}

pub fn run_predict(rc: &mut RunConfig, args: PredictArgs) -> CliResult<()> {
    let model_arg = rc.require_path("model", args.model)?;
    let embeddings_path = rc.require_path("embeddings", args.embeddings)?;
    let manifest_path = rc.take_path("manifest", args.manifest)?;
    if let Some(p) = &manifest_path {
        super::require_path("manifest", p)?;
    }
    let split = rc.take("split", args.split)?.map(|s| parse_split(&s)).transpose()?;
    let metrics = rc.take_list("metric", args.metric)?;
    rc.forget("seed");
    rc.finish()?;
    if split.is_some() && manifest_path.is_none() {
        return Err(usage("--split needs --manifest"));
    }

    let (model, stats) = load_model(&model_arg)?;
    let embeddings = read_embeddings(&embeddings_path)?;
    let mut inputs = BTreeMap::new();
    let (model_path, norm_path) = model_paths(&model_arg);
    digest_input(&mut inputs, "model", &model_path)?;
    if stats.is_some() {
        digest_input(&mut inputs, "normalizer", &norm_path)?;
    }
    digest_input(&mut inputs, "embeddings", &embeddings_path)?;

    let normalize = |set: &EmbeddingSet| -> CliResult<EmbeddingSet> {
        Ok(match &stats {
            Some(s) => s.normalize_set(set)?,
            None => set.clone(),
        })
    };

    rc.create_out()?;
    let set = match &manifest_path {
        Some(path) => {
            digest_input(&mut inputs, "manifest", path)?;
            let m = DatasetManifest::read(path)?;
            if m.class_names() != model.class_names() || m.task() != model.task() {
                return Err(usage("the manifest's task or classes differ from the model's"));
            }
            let items = items_in(&m, |s| split.is_none() || s == split);
            if items.is_empty() {
                return Err(usage("no manifest items to predict"));
            }
            let raw = m.labeled_set(&items, &embeddings)?;
            let labeled = LabeledSet::new(normalize(&raw.embeddings)?, raw.labels)?;
            let metrics = if metrics.is_empty() {
                MetricKind::defaults(m.task(), m.class_names().len())
            } else {
                metrics
            };
            let report = evaluate(&labeled.score_table(&model)?, m.task(), &metrics)?;
            let mut text = report.to_json()?;
            text.push('\n');
            write_text(&rc.out, "report.json", &text)?;
            for (k, v) in &report.values {
                println!("{k} {v:.6}");
            }
            labeled.embeddings
        }
        None => normalize(&embeddings)?,
    };

    let scores = model.predict_set(&set)?;
    let mut csv = String::from("clip_id");
    for name in model.class_names() {
        csv.push(',');
        csv.push_str(&crate::analysis::csv_field(name));
    }
    csv.push('\n');
    for (item, row) in set.items().iter().zip(scores.rows()) {
        csv.push_str(&crate::analysis::csv_field(&item.clip_id));
        for v in row {
            let _ = write!(csv, ",{v:.6}");
        }
        csv.push('\n');
    }
    write_text(&rc.out, "predictions.csv", &csv)?;
    rc.write_provenance(&inputs, None::<()>)
}
