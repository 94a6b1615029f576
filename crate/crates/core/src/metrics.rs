//! Evaluation metrics: accuracy, top-k accuracy, MAP, MAUC and lwlrap.
//!
//! Tie handling is deterministic everywhere:
//!
//! * accuracy and top-k break score ties in favour of the lower class index;
//! * AP and lwlrap rank tied items (or classes) with the lower index first;
//! * AUC counts a tied positive/negative pair as half a win.
//!
//! Classes without positives (and, for AUC, without negatives) are excluded
//! from the class means and listed in the report.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::probe::TaskKind;

/// Scores and binary ground truth, items by classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    scores: Array2<f64>,
    truths: Array2<bool>,
    class_names: Vec<String>,
}

impl ScoreTable {
    pub fn new(scores: Array2<f64>, truths: Array2<bool>, class_names: Vec<String>) -> Result<Self> {
        if scores.dim() != truths.dim() {
            return Err(Error::ShapeError(format!(
                "scores {:?} vs truths {:?}",
                scores.dim(),
                truths.dim()
            )));
        }
        if class_names.len() != scores.ncols() {
            return Err(Error::ShapeError(format!(
                "{} class names for {} columns",
                class_names.len(),
                scores.ncols()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::DomainError("scores must be finite".into()));
        }
        Ok(Self {
            scores,
            truths,
            class_names,
        })
    }

    /// Builds a table with generated class names `c0, c1, ...`.
    pub fn unnamed(scores: Array2<f64>, truths: Array2<bool>) -> Result<Self> {
        let names = (0..scores.ncols()).map(|c| format!("c{c}")).collect();
        Self::new(scores, truths, names)
    }

    /// One-hot truths from per-item class indices.
    pub fn from_labels(scores: Array2<f64>, labels: &[usize], class_names: Vec<String>) -> Result<Self> {
        let (n, c) = scores.dim();
        if labels.len() != n {
            return Err(Error::ShapeError(format!("{} labels for {n} rows", labels.len())));
        }
        let mut truths = Array2::from_elem((n, c), false);
        for (i, &l) in labels.iter().enumerate() {
            if l >= c {
                return Err(Error::LabelError(format!("label {l} outside {c} classes")));
            }
            truths[[i, l]] = true;
        }
        Self::new(scores, truths, class_names)
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn truths(&self) -> &Array2<bool> {
        &self.truths
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_items(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.scores.ncols()
    }

    fn single_labels(&self) -> Result<Vec<usize>> {
        self.truths
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let mut hits = row.iter().enumerate().filter(|(_, t)| **t).map(|(c, _)| c);
                match (hits.next(), hits.next()) {
                    (Some(c), None) => Ok(c),
                    _ => Err(Error::ShapeError(format!("truth row {i} is not one-hot"))),
                }
            })
            .collect()
    }
}

/// Descending score, then ascending index.
fn rank_order(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Zero-based rank of `target` within `row` under the tie rule.
fn rank_of(row: ArrayView1<f64>, target: usize) -> usize {
    let s = row[target];
    row.iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < target))
        .count()
}

/// Fraction of rows whose top-scoring class is the true class.
pub fn accuracy(t: &ScoreTable) -> Result<f64> {
    top_k_accuracy(t, 1)
}

/// Fraction of rows whose true class is among the `k` best scores.
pub fn top_k_accuracy(t: &ScoreTable, k: usize) -> Result<f64> {
    if k == 0 || k > t.n_classes() {
        return Err(Error::InvalidK {
            k,
            classes: t.n_classes(),
        });
    }
    let labels = t.single_labels()?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("score table has no rows".into()));
    }
    let hits = labels
        .iter()
        .zip(t.scores.rows())
        .filter(|(&l, row)| rank_of(*row, l) < k)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Average precision of one ranking; `None` when there are no positives.
pub fn average_precision(scores: &[f64], truths: &[bool]) -> Option<f64> {
    let mut order: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    order.sort_by(|a, b| rank_order(*a, *b));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, (i, _)) in order.iter().enumerate() {
        if truths[*i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Mann-Whitney AUC; `None` unless both classes are present.
pub fn roc_auc(scores: &[f64], truths: &[bool]) -> Option<f64> {
    let n_pos = truths.iter().filter(|t| **t).count();
    let n_neg = truths.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // sum of mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 1) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| truths[i]).count();
        rank_sum += mid_rank * pos_in_group as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// A class-averaged metric with its per-class values.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAverage {
    pub value: f64,
    /// `None` for classes that were excluded.
    pub per_class: Vec<Option<f64>>,
}

impl ClassAverage {
    fn from_per_class(per_class: Vec<Option<f64>>) -> Self {
        let eligible: Vec<f64> = per_class.iter().flatten().copied().collect();
        let value = if eligible.is_empty() {
            0.0
        } else {
            eligible.iter().sum::<f64>() / eligible.len() as f64
        };
        Self { value, per_class }
    }

    pub fn skipped(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(c, _)| c)
            .collect()
    }
}

fn per_class(t: &ScoreTable, f: impl Fn(&[f64], &[bool]) -> Option<f64>) -> ClassAverage {
    let per_class = (0..t.n_classes())
        .map(|c| {
            let scores: Vec<f64> = t.scores.column(c).to_vec();
            let truths: Vec<bool> = t.truths.column(c).to_vec();
            f(&scores, &truths)
        })
        .collect();
    ClassAverage::from_per_class(per_class)
}

/// Mean average precision over classes with at least one positive.
pub fn map(t: &ScoreTable) -> ClassAverage {
    per_class(t, average_precision)
}

/// Mean ROC AUC over classes with both positives and negatives.
pub fn mauc(t: &ScoreTable) -> ClassAverage {
    per_class(t, roc_auc)
}

/// Label-weighted label-ranking average precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Lwlrap {
    pub value: f64,
    /// Mean rank precision of each class's true labels; `None` if it has none.
    pub per_class: Vec<Option<f64>>,
    /// Share of all true labels carried by each class.
    pub weights: Vec<f64>,
}

pub fn lwlrap(t: &ScoreTable) -> Lwlrap {
    let c = t.n_classes();
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    let mut order: Vec<(usize, f64)> = Vec::with_capacity(c);
    for (scores, truths) in t.scores.rows().into_iter().zip(t.truths.rows()) {
        order.clear();
        order.extend(scores.iter().copied().enumerate());
        order.sort_by(|a, b| rank_order(*a, *b));
        let mut hits = 0usize;
        for (rank, &(class, _)) in order.iter().enumerate() {
            if truths[class] {
                hits += 1;
                sums[class] += hits as f64 / (rank + 1) as f64;
                counts[class] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Lwlrap {
            value: 0.0,
            per_class: vec![None; c],
            weights: vec![0.0; c],
        };
    }
    Lwlrap {
        value: sums.iter().sum::<f64>() / total as f64,
        per_class: sums
            .iter()
            .zip(&counts)
            .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
            .collect(),
        weights: counts.iter().map(|&n| n as f64 / total as f64).collect(),
    }
}

/// A metric selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Accuracy,
    /// Top-k accuracy, written `top<k>` (e.g. `top5`).
    TopK(usize),
    Map,
    Mauc,
    Lwlrap,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::Accuracy => f.write_str("accuracy"),
            MetricKind::TopK(k) => write!(f, "top{k}"),
            MetricKind::Map => f.write_str("map"),
            MetricKind::Mauc => f.write_str("mauc"),
            MetricKind::Lwlrap => f.write_str("lwlrap"),
        }
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "accuracy" | "acc" => Ok(MetricKind::Accuracy),
            "map" => Ok(MetricKind::Map),
            "mauc" => Ok(MetricKind::Mauc),
            "lwlrap" => Ok(MetricKind::Lwlrap),
            other => other
                .strip_prefix("top")
                .map(|k| k.trim_start_matches(['-', '_', '@']))
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k > 0)
                .map(MetricKind::TopK)
                .ok_or_else(|| Error::UnknownMetric(s.to_string())),
        }
    }
}

impl Serialize for MetricKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl MetricKind {
    pub fn applies_to(&self, task: TaskKind, n_classes: usize) -> bool {
        match self {
            MetricKind::Accuracy => task == TaskKind::Multiclass,
            MetricKind::TopK(k) => task == TaskKind::Multiclass && *k <= n_classes,
            MetricKind::Map | MetricKind::Mauc | MetricKind::Lwlrap => true,
        }
    }

    /// The metric usually reported (and used for model selection) for a task.
    pub fn default_for(task: TaskKind) -> Self {
        match task {
            TaskKind::Multiclass => MetricKind::Accuracy,
            TaskKind::Multilabel => MetricKind::Lwlrap,
        }
    }

    /// Every metric meaningful for `task` with `n_classes` classes.
    pub fn defaults(task: TaskKind, n_classes: usize) -> Vec<MetricKind> {
        match task {
            TaskKind::Multiclass => {
                let mut v = vec![MetricKind::Accuracy];
                if n_classes >= 5 {
                    v.push(MetricKind::TopK(5));
                }
                v.extend([MetricKind::Map, MetricKind::Mauc]);
                v
            }
            TaskKind::Multilabel => vec![MetricKind::Map, MetricKind::Mauc, MetricKind::Lwlrap],
        }
    }
}

/// A float written with exactly six decimals.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(transparent)]
pub struct Fixed6(pub f64);

impl Serialize for Fixed6 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = serde_json::value::RawValue::from_string(format!("{:.6}", self.0))
            .map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

/// Metric values for one evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub values: BTreeMap<MetricKind, f64>,
    /// Per metric, per class (in class order); `None` for excluded classes.
    pub per_class: BTreeMap<MetricKind, Vec<Option<f64>>>,
    pub class_names: Vec<String>,
    pub n_items: usize,
}

impl MetricReport {
    pub fn get(&self, metric: MetricKind) -> Option<f64> {
        self.values.get(&metric).copied()
    }

    /// Names of the classes excluded from `metric`'s mean.
    pub fn skipped(&self, metric: MetricKind) -> Vec<&str> {
        self.per_class
            .get(&metric)
            .map(|v| {
                v.iter()
                    .zip(&self.class_names)
                    .filter(|(v, _)| v.is_none())
                    .map(|(_, n)| n.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub(crate) fn to_document(&self) -> ReportDocument<'_> {
        ReportDocument {
            n_items: self.n_items,
            metrics: self.values.iter().map(|(k, v)| (k.to_string(), Fixed6(*v))).collect(),
            per_class: self
                .per_class
                .iter()
                .map(|(k, vals)| {
                    let classes = self
                        .class_names
                        .iter()
                        .zip(vals)
                        .filter_map(|(n, v)| v.map(|v| (n.as_str(), Fixed6(v))))
                        .collect();
                    (k.to_string(), classes)
                })
                .collect(),
            skipped: self
                .per_class
                .keys()
                .map(|k| (k.to_string(), self.skipped(*k)))
                .filter(|(_, s)| !s.is_empty())
                .collect(),
        }
    }
}

#[derive(Serialize)]
pub(crate) struct ReportDocument<'a> {
    n_items: usize,
    metrics: BTreeMap<String, Fixed6>,
    per_class: BTreeMap<String, Vec<(&'a str, Fixed6)>>,
    skipped: BTreeMap<String, Vec<&'a str>>,
}

/// Computes `metrics` over `t`. Metrics that do not apply to `task` are an
/// [`Error::UnknownMetric`].
pub fn evaluate(t: &ScoreTable, task: TaskKind, metrics: &[MetricKind]) -> Result<MetricReport> {
    let mut report = MetricReport {
        class_names: t.class_names.clone(),
        n_items: t.n_items(),
        ..MetricReport::default()
    };
    for &metric in metrics {
        if !metric.applies_to(task, t.n_classes()) {
            return Err(Error::UnknownMetric(format!(
                "{metric} is not defined for a {task} task with {} classes",
                t.n_classes()
            )));
        }
        let value = match metric {
            MetricKind::Accuracy => accuracy(t)?,
            MetricKind::TopK(k) => top_k_accuracy(t, k)?,
            MetricKind::Map | MetricKind::Mauc => {
                let avg = if metric == MetricKind::Map { map(t) } else { mauc(t) };
                report.per_class.insert(metric, avg.per_class);
                avg.value
            }
            MetricKind::Lwlrap => {
                let l = lwlrap(t);
                report.per_class.insert(metric, l.per_class);
                l.value
            }
        };
        report.values.insert(metric, value);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table(scores: Array2<f64>, truths: Array2<u8>) -> ScoreTable {
        ScoreTable::unnamed(scores, truths.mapv(|t| t == 1)).unwrap()
    }

    #[test]
    fn perfect_accuracy() {
        let t = table(array![[0.9, 0.1], [0.2, 0.8]], array![[1, 0], [0, 1]]);
        assert_eq!(accuracy(&t).unwrap(), 1.0);
    }

    #[test]
    fn zero_scores_pick_class_zero() {
        let t = table(Array2::zeros((4, 2)), array![[1, 0], [0, 1], [1, 0], [0, 1]]);
        assert_eq!(accuracy(&t).unwrap(), 0.5);
    }

    #[test]
    fn three_of_four() {
        let t = table(
            array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.7, 0.3]],
            array![[1, 0], [0, 1], [1, 0], [0, 1]],
        );
        assert_eq!(accuracy(&t).unwrap(), 0.75);
    }

    #[test]
    fn non_one_hot_rows_are_rejected() {
        let t = table(array![[0.5, 0.5]], array![[1, 1]]);
        assert!(matches!(accuracy(&t), Err(Error::ShapeError(_))));
        let t = table(array![[0.5, 0.5]], array![[0, 0]]);
        assert!(matches!(accuracy(&t), Err(Error::ShapeError(_))));
    }

    #[test]
    fn top_k_examples() {
        let t = table(array![[0.2, 0.5, 0.3]], array![[0, 0, 1]]);
        assert_eq!(top_k_accuracy(&t, 1).unwrap(), 0.0);
        assert_eq!(top_k_accuracy(&t, 2).unwrap(), 1.0);
        assert_eq!(top_k_accuracy(&t, 3).unwrap(), 1.0);
        assert!(matches!(top_k_accuracy(&t, 0), Err(Error::InvalidK { .. })));
        assert!(matches!(top_k_accuracy(&t, 4), Err(Error::InvalidK { .. })));
    }

    #[test]
    fn top_k_ties_favour_lower_index() {
        // true class 2 ties with class 0 and 1 at the top
        let t = table(array![[0.5, 0.5, 0.5]], array![[0, 0, 1]]);
        assert_eq!(top_k_accuracy(&t, 2).unwrap(), 0.0);
        assert_eq!(top_k_accuracy(&t, 3).unwrap(), 1.0);
    }

    #[test]
    fn ap_worked_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.9, 0.1], &[true, false]), Some(1.0));
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap();
        assert_eq!(ap, 0.25);
        assert_eq!(average_precision(&[0.3], &[false]), None);
    }

    #[test]
    fn auc_worked_examples() {
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3], &[true, false, false]), Some(1.0));
        assert_eq!(roc_auc(&[0.1, 0.8, 0.3], &[true, false, false]), Some(0.0));
        assert_eq!(roc_auc(&[0.1, 0.8], &[true, true]), None);
    }

    #[test]
    fn map_skips_classes_without_positives() {
        let t = table(array![[0.9, 0.2], [0.1, 0.3]], array![[1, 0], [0, 0]]);
        let m = map(&t);
        assert_eq!(m.value, 1.0);
        assert_eq!(m.skipped(), vec![1]);
    }

    #[test]
    fn lwlrap_worked_examples() {
        let t = table(array![[0.9]], array![[1]]);
        assert_eq!(lwlrap(&t).value, 1.0);
        let t = table(array![[0.9, 0.7, 0.8]], array![[1, 1, 0]]);
        assert!((lwlrap(&t).value - 5.0 / 6.0).abs() < 1e-15);
        let t = table(array![[0.9, 0.1, 0.8], [0.1, 0.6, 0.2]], array![[1, 0, 1], [0, 1, 0]]);
        assert_eq!(lwlrap(&t).value, 1.0);
    }

    #[test]
    fn zero_label_rows_contribute_nothing() {
        let t = table(array![[0.9, 0.1], [0.1, 0.9]], array![[1, 0], [0, 0]]);
        let l = lwlrap(&t);
        assert_eq!(l.value, 1.0);
        assert_eq!(l.weights, vec![1.0, 0.0]);
        assert_eq!(l.per_class, vec![Some(1.0), None]);
    }

    #[test]
    fn metric_names_parse() {
        assert_eq!("accuracy".parse::<MetricKind>().unwrap(), MetricKind::Accuracy);
        assert_eq!("top5".parse::<MetricKind>().unwrap(), MetricKind::TopK(5));
        assert_eq!("TOP-1".parse::<MetricKind>().unwrap(), MetricKind::TopK(1));
        assert_eq!("lwlrap".parse::<MetricKind>().unwrap(), MetricKind::Lwlrap);
        assert!("f1".parse::<MetricKind>().is_err());
        assert!("top0".parse::<MetricKind>().is_err());
        for m in [MetricKind::Map, MetricKind::TopK(3), MetricKind::Mauc] {
            assert_eq!(m.to_string().parse::<MetricKind>().unwrap(), m);
        }
    }

    #[test]
    fn report_json_uses_six_decimals() {
        let t = table(
            array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]],
            array![[1, 0], [0, 1], [0, 1]],
        );
        let report = evaluate(&t, TaskKind::Multiclass, &[MetricKind::Accuracy, MetricKind::Map]).unwrap();
        let json = report.to_json().unwrap();
        assert!(json.contains("\"accuracy\": 0.666667"), "{json}");
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["n_items"], 3);
    }

    #[test]
    fn evaluate_rejects_inapplicable_metrics() {
        let t = table(array![[0.9, 0.1]], array![[1, 1]]);
        assert!(matches!(
            evaluate(&t, TaskKind::Multilabel, &[MetricKind::Accuracy]),
            Err(Error::UnknownMetric(_))
        ));
    }
}
