//! Evaluation protocols over manifest-described datasets.
//!
//! * Cross-validation follows the folds written in the manifest; folds are
//!   never re-drawn here.
//! * Split experiments pick hyperparameters on the validation split and
//!   evaluate the chosen configuration once on the test split.
//!
//! In both, the normalizer is fitted on the training portion only and reused
//! frozen for validation and test items.

mod manifest;

pub use manifest::{DatasetManifest, ManifestHeader, ManifestItem, Split};

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{fit_normalizer, EmbeddingSet, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::metrics::{self, Fixed6, MetricKind, MetricReport};
use crate::probe::{train_probe, LabeledSet, TaskKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Protocol {
    /// Predefined folds `1..=folds`.
    Cv { folds: usize },
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    /// Candidate probe settings; the per-config `seed` is replaced by one
    /// derived from `seed`.
    pub grid: Vec<TrainConfig>,
    /// Validation metric used for early stopping and grid selection.
    pub selection: Option<MetricKind>,
    /// Metrics reported on held-out data; defaults per task.
    pub metrics: Option<Vec<MetricKind>>,
    pub seed: u64,
    pub epsilon: f64,
    /// Overrides the manifest's `carve_val`.
    pub carve_val: Option<usize>,
    /// Record the clip ids touched by every phase.
    #[serde(default)]
    pub trace: bool,
}

impl ExperimentConfig {
    pub fn new(protocol: Protocol) -> Self {
        Self {
            protocol,
            grid: vec![TrainConfig::default()],
            selection: None,
            metrics: None,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            carve_val: None,
            trace: false,
        }
    }

    /// SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Clip ids seen by each phase of one fold.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct FoldTrace {
    pub normalizer_fit: Vec<String>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl FoldTrace {
    /// Held-out ids that reached a phase they must not touch.
    pub fn leaks(&self) -> Vec<String> {
        let fitted: HashSet<&str> = self
            .normalizer_fit
            .iter()
            .chain(&self.train)
            .map(String::as_str)
            .collect();
        let val: HashSet<&str> = self.val.iter().map(String::as_str).collect();
        self.test
            .iter()
            .filter(|id| fitted.contains(id.as_str()) || val.contains(id.as_str()))
            .chain(self.val.iter().filter(|id| fitted.contains(id.as_str())))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedConfig {
    pub index: usize,
    pub objective: f64,
}

/// Orders grid points by descending objective; ties keep grid order and
/// NaN objectives sort last.
pub fn sweep<T>(grid: &[T], objective: impl Fn(&T) -> f64) -> Vec<RankedConfig> {
    let mut ranked: Vec<RankedConfig> = grid
        .iter()
        .enumerate()
        .map(|(index, g)| RankedConfig {
            index,
            objective: objective(g),
        })
        .collect();
    ranked.sort_by(|a, b| match (a.objective.is_nan(), b.objective.is_nan()) {
        (false, false) => b.objective.partial_cmp(&a.objective).unwrap(),
        (a_nan, b_nan) => a_nan.cmp(&b_nan),
    });
    ranked
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    /// CV fold id, or `None` for a split experiment.
    pub fold: Option<u32>,
    pub report: MetricReport,
    pub chosen: usize,
    pub chosen_config: TrainConfig,
    /// Grid ranking by validation score (empty without validation data).
    pub ranking: Vec<RankedConfig>,
    pub best_epoch: usize,
    pub counts: BTreeMap<Split, usize>,
    pub trace: Option<FoldTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub n_items: usize,
    /// Items per split (split protocol) or per fold id (CV), keyed by name.
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub task: TaskKind,
    pub protocol: Protocol,
    pub folds: Vec<FoldResult>,
    /// Mean over folds of each metric reported by every fold.
    pub aggregate: BTreeMap<MetricKind, f64>,
    pub provenance: Provenance,
}

#[derive(Serialize)]
struct FoldDocument<'a> {
    fold: Option<u32>,
    chosen: usize,
    chosen_config: &'a TrainConfig,
    best_epoch: usize,
    ranking: &'a [RankedConfig],
    counts: &'a BTreeMap<Split, usize>,
    report: metrics::ReportDocument<'a>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<&'a FoldTrace>,
}

#[derive(Serialize)]
struct ResultDocument<'a> {
    task: TaskKind,
    protocol: Protocol,
    aggregate: BTreeMap<String, Fixed6>,
    folds: Vec<FoldDocument<'a>>,
    provenance: &'a Provenance,
}

impl ExperimentResult {
    pub fn fold_values(&self, metric: MetricKind) -> Vec<f64> {
        self.folds.iter().filter_map(|f| f.report.get(metric)).collect()
    }

    pub fn leaks(&self) -> Vec<String> {
        self.folds
            .iter()
            .filter_map(|f| f.trace.as_ref())
            .flat_map(FoldTrace::leaks)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ResultDocument {
            task: self.task,
            protocol: self.protocol,
            aggregate: self.aggregate.iter().map(|(k, v)| (k.to_string(), Fixed6(*v))).collect(),
            folds: self
                .folds
                .iter()
                .map(|f| FoldDocument {
                    fold: f.fold,
                    chosen: f.chosen,
                    chosen_config: &f.chosen_config,
                    best_epoch: f.best_epoch,
                    ranking: &f.ranking,
                    counts: &f.counts,
                    report: f.report.to_document(),
                    trace: f.trace.as_ref(),
                })
                .collect(),
            provenance: &self.provenance,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// One row per fold plus a final `mean` row.
    pub fn to_csv(&self) -> String {
        let metrics: Vec<MetricKind> = self.aggregate.keys().copied().collect();
        let mut out = String::from("fold");
        for m in &metrics {
            let _ = write!(out, ",{m}");
        }
        out.push('\n');
        for f in &self.folds {
            out.push_str(&f.fold.map_or_else(|| "test".to_string(), |id| id.to_string()));
            for m in &metrics {
                let _ = write!(out, ",{:.6}", f.report.get(*m).unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        out.push_str("mean");
        for m in &metrics {
            let _ = write!(out, ",{:.6}", self.aggregate[m]);
        }
        out.push('\n');
        out
    }
}

/// Seed for one (fold, purpose) job, mixed with splitmix64.
pub(crate) fn derive_seed(seed: u64, fold: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(fold.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(salt.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct FoldJob<'a> {
    fold: Option<u32>,
    train: Vec<&'a ManifestItem>,
    val: Vec<&'a ManifestItem>,
    test: Vec<&'a ManifestItem>,
    seed: u64,
}

/// Moves `n` seeded-random training items into validation.
fn carve<'a>(train: &mut Vec<&'a ManifestItem>, n: usize, seed: u64) -> Result<Vec<&'a ManifestItem>> {
    if n >= train.len() {
        return Err(Error::ManifestError(format!(
            "cannot carve {n} validation items from {} training items",
            train.len()
        )));
    }
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let taken: HashSet<usize> = idx[..n].iter().copied().collect();
    let mut val = Vec::with_capacity(n);
    let mut keep = Vec::with_capacity(train.len() - n);
    for (i, item) in train.drain(..).enumerate() {
        if taken.contains(&i) {
            val.push(item);
        } else {
            keep.push(item);
        }
    }
    *train = keep;
    Ok(val)
}

fn report_metrics(m: &DatasetManifest, cfg: &ExperimentConfig) -> Result<Vec<MetricKind>> {
    let c = m.class_names().len();
    let list = cfg
        .metrics
        .clone()
        .unwrap_or_else(|| MetricKind::defaults(m.task(), c));
    for k in list.iter().chain(cfg.selection.as_ref()) {
        if !k.applies_to(m.task(), c) {
            return Err(Error::UnknownMetric(format!("{k} does not apply to a {} task with {c} classes", m.task())));
        }
    }
    Ok(list)
}

fn run_fold(
    m: &DatasetManifest,
    embeddings: &EmbeddingSet,
    cfg: &ExperimentConfig,
    metrics: &[MetricKind],
    job: FoldJob<'_>,
) -> Result<FoldResult> {
    if job.train.is_empty() || job.test.is_empty() {
        return Err(Error::ManifestError(format!(
            "fold {:?} has {} training and {} test items",
            job.fold,
            job.train.len(),
            job.test.len()
        )));
    }
    let raw_train = m.labeled_set(&job.train, embeddings)?;
    let stats = fit_normalizer(&raw_train.embeddings, cfg.epsilon)?;
    let normalized = |set: LabeledSet| -> Result<LabeledSet> {
        LabeledSet::new(stats.normalize_set(&set.embeddings)?, set.labels)
    };
    let fit_ids: Vec<String> = raw_train.embeddings.clip_ids().map(str::to_owned).collect();
    let train = normalized(raw_train)?;
    let val = normalized(m.labeled_set(&job.val, embeddings)?)?;
    let test = normalized(m.labeled_set(&job.test, embeddings)?)?;
    let val_ref = (!val.is_empty()).then_some(&val);

    if cfg.grid.len() > 1 && val_ref.is_none() {
        return Err(Error::InvalidConfig(
            "a hyperparameter grid needs validation data (split or carve_val)".into(),
        ));
    }

    let selection = cfg.selection.unwrap_or(MetricKind::default_for(m.task()));
    let trained = cfg
        .grid
        .par_iter()
        .enumerate()
        .map(|(g, point)| {
            let point = TrainConfig {
                seed: derive_seed(job.seed, g as u64, 1),
                selection: point.selection.or(Some(selection)),
                ..point.clone()
            };
            train_probe(&train, val_ref, m.task(), m.class_names(), &point).map(|t| (point, t))
        })
        .collect::<Result<Vec<_>>>()?;

    let ranking = if val_ref.is_some() {
        sweep(&trained, |(_, t)| t.best_metric.unwrap_or(f64::NAN))
    } else {
        Vec::new()
    };
    let chosen = ranking.first().map_or(0, |r| r.index);
    let (chosen_config, best) = &trained[chosen];

    let table = test.score_table(&best.model)?;
    let report = metrics::evaluate(&table, m.task(), metrics)?;

    let ids = |s: &LabeledSet| s.embeddings.clip_ids().map(str::to_owned).collect::<Vec<_>>();
    let trace = cfg.trace.then(|| FoldTrace {
        normalizer_fit: fit_ids,
        train: ids(&train),
        val: ids(&val),
        test: ids(&test),
    });
    Ok(FoldResult {
        fold: job.fold,
        report,
        chosen,
        chosen_config: chosen_config.clone(),
        ranking,
        best_epoch: best.best_epoch,
        counts: BTreeMap::from([
            (Split::Train, train.len()),
            (Split::Val, val.len()),
            (Split::Test, test.len()),
        ]),
        trace,
    })
}

fn aggregate(folds: &[FoldResult]) -> BTreeMap<MetricKind, f64> {
    let Some(first) = folds.first() else {
        return BTreeMap::new();
    };
    first
        .report
        .values
        .keys()
        .filter_map(|&k| {
            let vals: Option<Vec<f64>> = folds.iter().map(|f| f.report.get(k)).collect();
            vals.map(|v| (k, v.iter().sum::<f64>() / v.len() as f64))
        })
        .collect()
}

fn validate_grid(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.grid.is_empty() {
        return Err(Error::InvalidConfig("hyperparameter grid is empty".into()));
    }
    cfg.grid.iter().try_for_each(TrainConfig::validate)
}

/// Trains on all folds but one and evaluates on the held-out fold, for each
/// of the manifest's predefined folds `1..=k`.
pub fn run_cross_validation(
    m: &DatasetManifest,
    embeddings: &EmbeddingSet,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult> {
    let Protocol::Cv { folds: k } = cfg.protocol else {
        return Err(Error::InvalidConfig("run_cross_validation needs a CV protocol".into()));
    };
    validate_grid(cfg)?;
    if k < 2 {
        return Err(Error::InvalidConfig(format!("cross-validation needs at least 2 folds, got {k}")));
    }
    if let Some(item) = m.items.iter().find(|i| i.fold.is_none()) {
        return Err(Error::ManifestError(format!("`{}` has no fold", item.clip_id)));
    }
    let expected: Vec<u32> = (1..=k as u32).collect();
    let found: Vec<u32> = m.fold_ids().into_iter().collect();
    if found != expected {
        return Err(Error::ManifestError(format!("folds {found:?} do not cover 1..={k}")));
    }
    let metrics = report_metrics(m, cfg)?;
    let carve_n = cfg.carve_val.or(m.header.carve_val).unwrap_or(0);

    let jobs = expected
        .iter()
        .map(|&fold| {
            let mut train: Vec<&ManifestItem> = m.items.iter().filter(|i| i.fold != Some(fold)).collect();
            let test = m.items.iter().filter(|i| i.fold == Some(fold)).collect();
            let seed = derive_seed(cfg.seed, fold as u64, 0);
            let val = if carve_n > 0 {
                carve(&mut train, carve_n, seed)?
            } else {
                Vec::new()
            };
            Ok(FoldJob {
                fold: Some(fold),
                train,
                val,
                test,
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let folds = jobs
        .into_par_iter()
        .map(|job| run_fold(m, embeddings, cfg, &metrics, job))
        .collect::<Result<Vec<_>>>()?;

    let counts = expected
        .iter()
        .map(|&f| (format!("fold{f}"), m.items.iter().filter(|i| i.fold == Some(f)).count()))
        .collect();
    Ok(ExperimentResult {
        task: m.task(),
        protocol: cfg.protocol,
        aggregate: aggregate(&folds),
        folds,
        provenance: Provenance {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            tool_version: crate::VERSION.to_string(),
            n_items: m.items.len(),
            counts,
        },
    })
}

/// Selects hyperparameters on the validation split and reports the chosen
/// configuration on the test split.
pub fn run_split_experiment(
    m: &DatasetManifest,
    embeddings: &EmbeddingSet,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult> {
    if cfg.protocol != Protocol::Split {
        return Err(Error::InvalidConfig("run_split_experiment needs the split protocol".into()));
    }
    validate_grid(cfg)?;
    if let Some(item) = m.items.iter().find(|i| i.split.is_none()) {
        return Err(Error::ManifestError(format!("`{}` has no split", item.clip_id)));
    }
    let metrics = report_metrics(m, cfg)?;
    let of = |s: Split| -> Vec<&ManifestItem> { m.items.iter().filter(|i| i.split == Some(s)).collect() };
    let (mut train, mut val, test) = (of(Split::Train), of(Split::Val), of(Split::Test));
    let seed = derive_seed(cfg.seed, 0, 0);
    if val.is_empty() {
        if let Some(n) = cfg.carve_val.or(m.header.carve_val).filter(|&n| n > 0) {
            val = carve(&mut train, n, seed)?;
        }
    }
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        if part.is_empty() {
            return Err(Error::ManifestError(format!("{name} split is empty")));
        }
    }

    let counts = [("train", train.len()), ("val", val.len()), ("test", test.len())]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let fold = run_fold(
        m,
        embeddings,
        cfg,
        &metrics,
        FoldJob {
            fold: None,
            train,
            val,
            test,
            seed,
        },
    )?;
    let folds = vec![fold];
    Ok(ExperimentResult {
        task: m.task(),
        protocol: cfg.protocol,
        aggregate: aggregate(&folds),
        folds,
        provenance: Provenance {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            tool_version: crate::VERSION.to_string(),
            n_items: m.items.len(),
            counts,
        },
    })
}

/// Dispatches on `cfg.protocol`.
pub fn run_experiment(
    m: &DatasetManifest,
    embeddings: &EmbeddingSet,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult> {
    match cfg.protocol {
        Protocol::Cv { .. } => run_cross_validation(m, embeddings, cfg),
        Protocol::Split => run_split_experiment(m, embeddings, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_orders_and_breaks_ties_by_grid_order() {
        assert_eq!(sweep(&[0.3], |x| *x)[0].index, 0);
        let r = sweep(&[0.5, 0.5], |x| *x);
        assert_eq!(r.iter().map(|r| r.index).collect::<Vec<_>>(), vec![0, 1]);
        let r = sweep(&[0.1, f64::NAN, 0.9, 0.4], |x| *x);
        assert_eq!(r.iter().map(|r| r.index).collect::<Vec<_>>(), vec![2, 3, 0, 1]);
    }

    #[test]
    fn carve_is_seeded_and_disjoint() {
        let items: Vec<ManifestItem> = (0..10).map(|i| ManifestItem::new(format!("c{i}"), &["a"])).collect();
        let mut a: Vec<&ManifestItem> = items.iter().collect();
        let mut b = a.clone();
        let va = carve(&mut a, 3, 5).unwrap();
        let vb = carve(&mut b, 3, 5).unwrap();
        assert_eq!(va, vb);
        assert_eq!(a.len(), 7);
        assert!(va.iter().all(|v| !a.iter().any(|t| t.clip_id == v.clip_id)));
        assert!(carve(&mut a, 7, 0).is_err());
    }

    #[test]
    fn leak_detection() {
        let mut t = FoldTrace {
            normalizer_fit: vec!["a".into()],
            train: vec!["a".into()],
            val: vec!["b".into()],
            test: vec!["c".into()],
        };
        assert!(t.leaks().is_empty());
        t.normalizer_fit.push("c".into());
        assert_eq!(t.leaks(), vec!["c".to_string()]);
    }

    #[test]
    fn seeds_differ_per_fold() {
        assert_ne!(derive_seed(1, 1, 0), derive_seed(1, 2, 0));
        assert_ne!(derive_seed(1, 1, 0), derive_seed(1, 1, 1));
        assert_eq!(derive_seed(7, 3, 1), derive_seed(7, 3, 1));
    }
}
