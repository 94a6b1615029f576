mod common;

use common::*;
use probekit::embedding::{Embedding, EmbeddingSet};
use probekit::harness::{
    run_cross_validation, run_experiment, run_split_experiment, sweep, DatasetManifest, ExperimentConfig,
    ManifestHeader, ManifestItem, Protocol, Split,
};
use probekit::metrics::MetricKind;
use probekit::probe::{TaskKind, TrainConfig};
use probekit::Error;

fn cv(folds: usize) -> ExperimentConfig {
    ExperimentConfig::new(Protocol::Cv { folds })
}

#[test]
fn five_fold_cv_reports_every_fold() {
    let (m, set) = clustered_cv_data(1, 5, 12, 3, 6, 0.3);
    let cfg = ExperimentConfig {
        trace: true,
        ..cv(5)
    };
    let r = run_cross_validation(&m, &set, &cfg).unwrap();
    assert_eq!(r.folds.len(), 5);
    assert_eq!(r.folds.iter().map(|f| f.fold.unwrap()).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    for (metric, mean) in &r.aggregate {
        let values = r.fold_values(*metric);
        assert_eq!(values.len(), 5);
        assert!((values.iter().sum::<f64>() / 5.0 - mean).abs() <= 1e-12);
    }
    assert!(r.leaks().is_empty());
    for f in &r.folds {
        let trace = f.trace.as_ref().unwrap();
        assert_eq!(trace.test.len(), 12);
        assert_eq!(trace.normalizer_fit, trace.train);
        assert!(trace.test.iter().all(|id| !trace.train.contains(id)));
    }
    assert_eq!(run_cross_validation(&m, &set, &cfg).unwrap(), r);
}

#[test]
fn worker_count_does_not_change_results() {
    let (m, set) = clustered_cv_data(2, 4, 10, 2, 5, 0.5);
    let cfg = cv(4);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| run_cross_validation(&m, &set, &cfg).unwrap());
    let b = four.install(|| run_cross_validation(&m, &set, &cfg).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

/// Fold 1 holds classes a/b only; fold 2 adds two items of class c, which a
/// probe trained on fold 1 has never seen.
#[test]
fn two_fold_mean_is_the_fold_average() {
    let names = ["a", "b", "c"];
    let rows: [(&str, [f64; 2], usize, u32); 8] = [
        ("a1", [2.0, 0.5], 0, 1),
        ("a2", [3.0, -0.5], 0, 1),
        ("b1", [-2.0, 0.5], 1, 1),
        ("b2", [-3.0, -0.5], 1, 1),
        ("a3", [2.5, 0.3], 0, 2),
        ("b3", [-2.5, -0.3], 1, 2),
        ("c1", [0.2, 4.0], 2, 2),
        ("c2", [-0.2, 5.0], 2, 2),
    ];
    let mut set = EmbeddingSet::new(2);
    let mut items = Vec::new();
    for (id, v, c, fold) in rows {
        set.push(Embedding::new(id, v.to_vec())).unwrap();
        items.push(ManifestItem::new(id, &[names[c]]).with_fold(fold));
    }
    let header = ManifestHeader {
        task: TaskKind::Multiclass,
        class_names: names.map(String::from).to_vec(),
        carve_val: None,
    };
    let m = DatasetManifest::new(header, items).unwrap();
    let cfg = ExperimentConfig {
        metrics: Some(vec![MetricKind::Accuracy]),
        ..cv(2)
    };
    let r = run_cross_validation(&m, &set, &cfg).unwrap();
    assert_eq!(r.fold_values(MetricKind::Accuracy), vec![1.0, 0.5]);
    assert_eq!(r.aggregate[&MetricKind::Accuracy], 0.75);
    let csv = r.to_csv();
    assert_eq!(csv.lines().last().unwrap(), "mean,0.750000");
}

#[test]
fn split_counts_reach_provenance() {
    let (m, set) = clustered_split_data(3, [120, 10, 30], 2, 4);
    let r = run_split_experiment(&m, &set, &ExperimentConfig::new(Protocol::Split)).unwrap();
    let counts = &r.provenance.counts;
    assert_eq!((counts["train"], counts["val"], counts["test"]), (120, 10, 30));
    assert_eq!(r.folds.len(), 1);
    assert_eq!(r.folds[0].counts[&Split::Test], 30);
    assert_eq!(r.provenance.n_items, 160);
}

/// Classes lie on two parallel diagonals. The class means differ only along
/// the second axis, so a probe shrunk toward the mean difference is near
/// chance while an unpenalized one finds the diagonal boundary.
fn diagonal_split() -> (DatasetManifest, EmbeddingSet) {
    let mut set = EmbeddingSet::new(2);
    let mut items = Vec::new();
    for i in 0..80 {
        let c = i % 2;
        let x = -3.0 + 6.0 * ((i * 37) % 80) as f64 / 79.0;
        let y = x + if c == 0 { 0.4 } else { -0.4 };
        let id = format!("d{i:02}");
        set.push(Embedding::new(id.clone(), vec![x, y])).unwrap();
        let split = match i {
            0..=47 => Split::Train,
            48..=63 => Split::Val,
            _ => Split::Test,
        };
        items.push(ManifestItem::new(id, &[["pos", "neg"][c]]).with_split(split));
    }
    let header = ManifestHeader {
        task: TaskKind::Multiclass,
        class_names: vec!["pos".into(), "neg".into()],
        carve_val: None,
    };
    (DatasetManifest::new(header, items).unwrap(), set)
}

#[test]
fn grid_selection_prefers_the_separating_penalty() {
    let (m, set) = diagonal_split();
    let heavy = TrainConfig {
        l2_lambda: 100.0,
        learning_rate: 0.001,
        ..TrainConfig::default()
    };
    let light = TrainConfig {
        l2_lambda: 0.0,
        max_epochs: 1000,
        early_stop_patience: 1000,
        ..TrainConfig::default()
    };
    let cfg = ExperimentConfig {
        grid: vec![heavy, light],
        ..ExperimentConfig::new(Protocol::Split)
    };
    let r = run_split_experiment(&m, &set, &cfg).unwrap();
    let fold = &r.folds[0];
    assert_eq!(fold.chosen, 1, "{:?}", fold.ranking);
    assert_eq!(fold.chosen_config.l2_lambda, 0.0);
    assert_eq!(fold.ranking[0].index, 1);
    assert!(fold.ranking[0].objective > fold.ranking[1].objective);
    assert!(r.aggregate[&MetricKind::Accuracy] >= 0.9);
}

#[test]
fn sweep_examples() {
    assert_eq!(sweep(&[7], |_| 0.1)[0].index, 0);
    let tied = sweep(&[1, 2], |_| 0.4);
    assert_eq!((tied[0].index, tied[1].index), (0, 1));
    let scores = [0.2, 0.9, 0.5];
    let ranked: Vec<usize> = sweep(&scores, |s| *s).iter().map(|r| r.index).collect();
    let mut oracle: Vec<usize> = (0..3).collect();
    oracle.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    assert_eq!(ranked, oracle);
}

#[test]
fn carved_validation_comes_from_training_folds() {
    let (m, set) = clustered_cv_data(5, 3, 10, 2, 4, 0.3);
    let cfg = ExperimentConfig {
        carve_val: Some(4),
        trace: true,
        ..cv(3)
    };
    let r = run_cross_validation(&m, &set, &cfg).unwrap();
    for f in &r.folds {
        assert_eq!(f.counts[&Split::Val], 4);
        assert_eq!(f.counts[&Split::Train], 16);
        let t = f.trace.as_ref().unwrap();
        assert!(t.val.iter().all(|id| !t.train.contains(id) && !t.test.contains(id)));
    }
    assert!(r.leaks().is_empty());
}

#[test]
fn protocol_errors() {
    let (m, set) = clustered_cv_data(6, 2, 6, 2, 3, 0.3);
    assert!(matches!(run_cross_validation(&m, &set, &cv(3)), Err(Error::ManifestError(_))));
    assert!(matches!(
        run_experiment(&m, &set, &ExperimentConfig::new(Protocol::Split)),
        Err(Error::ManifestError(_))
    ));
    let grid = ExperimentConfig {
        grid: vec![TrainConfig::default(), TrainConfig::default()],
        ..cv(2)
    };
    assert!(matches!(run_cross_validation(&m, &set, &grid), Err(Error::InvalidConfig(_))));

    let (m, set) = clustered_split_data(7, [10, 0, 4], 2, 3);
    assert!(matches!(
        run_split_experiment(&m, &set, &ExperimentConfig::new(Protocol::Split)),
        Err(Error::ManifestError(_))
    ));
    let wrong = ExperimentConfig {
        metrics: Some(vec![MetricKind::Lwlrap, MetricKind::TopK(9)]),
        ..ExperimentConfig::new(Protocol::Split)
    };
    let (m, set) = clustered_split_data(7, [10, 2, 4], 2, 3);
    assert!(matches!(run_split_experiment(&m, &set, &wrong), Err(Error::UnknownMetric(_))));
}

#[test]
fn manifests_round_trip_through_jsonl() {
    let (m, _) = clustered_split_data(8, [3, 1, 2], 2, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    m.write(&path).unwrap();
    assert_eq!(DatasetManifest::read(&path).unwrap(), m);
    assert!(matches!(
        DatasetManifest::parse("{\"task\":\"multiclass\",\"class_names\":[\"a\",\"b\"]}\n{\"clip_id\":\"x\",\"labels\":[\"a\",\"b\"]}"),
        Err(Error::ManifestError(_))
    ));
    assert!(matches!(DatasetManifest::parse(""), Err(Error::ManifestError(_))));
}
