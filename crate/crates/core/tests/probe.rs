mod common;

use common::*;
use ndarray::{array, Array2};
use probekit::metrics::{accuracy, evaluate, MetricKind};
use probekit::probe::{
    decode_model, encode_model, loss_and_grad, predict, read_model, train_probe, write_model, Batch, LabeledSet,
    ProbeModel, TaskKind, TrainConfig,
};
use probekit::embedding::Embedding;
use probekit::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn zero_model_predictions() {
    let m = ProbeModel::zeros(TaskKind::Multiclass, names(4), 3).unwrap();
    assert_eq!(predict(&m, &Embedding::new("e", vec![1.0, 2.0, 3.0])).unwrap(), vec![0.25; 4]);
    let m = ProbeModel::zeros(TaskKind::Multilabel, names(3), 2).unwrap();
    assert_eq!(predict(&m, &Embedding::new("e", vec![1.0, -2.0])).unwrap(), vec![0.5; 3]);
    assert!(matches!(
        predict(&m, &Embedding::new("e", vec![1.0])),
        Err(Error::DimMismatch { expected: 2, found: 1 })
    ));
}

#[test]
fn softmax_worked_example() {
    let m = ProbeModel::new(array![[1.0, 0.0], [0.0, 1.0]], array![0.0, 0.0], TaskKind::Multiclass, names(2)).unwrap();
    let p = predict(&m, &Embedding::new("e", vec![3f64.ln(), 0.0])).unwrap();
    assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
}

#[test]
fn loss_special_cases() {
    let set = labeled("x", &[vec![1.0], vec![-1.0], vec![0.5], vec![2.0]], vec![vec![0], vec![1], vec![2], vec![3]]);
    let zero = ProbeModel::zeros(TaskKind::Multiclass, names(4), 1).unwrap();
    let g = loss_and_grad(&zero, &Batch::from_labeled(&set, 4), 0.3);
    assert!((g.loss - 4f64.ln()).abs() < 1e-15);

    let one = labeled("y", &[vec![1.0]], vec![vec![0]]);
    let confident = ProbeModel::new(array![[40.0], [-40.0]], array![0.0, 0.0], TaskKind::Multiclass, names(2)).unwrap();
    assert!(loss_and_grad(&confident, &Batch::from_labeled(&one, 2), 0.0).loss < 1e-30);
}

#[test]
fn zero_epochs_give_the_zero_model() {
    let set = labeled("x", &[vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0], vec![1]]);
    let cfg = TrainConfig {
        max_epochs: 0,
        ..TrainConfig::default()
    };
    let t = train_probe(&set, None, TaskKind::Multiclass, &names(2), &cfg).unwrap();
    assert!(t.model.weights().iter().all(|&w| w == 0.0));
    assert!(t.model.bias().iter().all(|&b| b == 0.0));
    assert_eq!(t.best_epoch, 0);
}

#[test]
fn one_dimensional_separable_data_is_learned() {
    let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![if i % 2 == 0 { -0.1 - 0.05 * i as f64 } else { 0.1 + 0.05 * i as f64 }]).collect();
    let ys: Vec<Vec<usize>> = (0..20).map(|i| vec![i % 2]).collect();
    let set = labeled("p", &xs, ys);
    let t = train_probe(&set, None, TaskKind::Multiclass, &names(2), &TrainConfig::default()).unwrap();
    assert_eq!(accuracy(&set.score_table(&t.model).unwrap()).unwrap(), 1.0);
}

#[test]
fn xor_is_not_linearly_separable() {
    let xs = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let set = labeled("x", &xs, vec![vec![0], vec![0], vec![1], vec![1]]);
    let cfg = TrainConfig {
        max_epochs: 500,
        l2_lambda: 0.0,
        ..TrainConfig::default()
    };
    let t = train_probe(&set, None, TaskKind::Multiclass, &names(2), &cfg).unwrap();
    assert!(accuracy(&set.score_table(&t.model).unwrap()).unwrap() <= 0.75);
}

#[test]
fn validation_selects_the_reported_snapshot() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (xs, ys) = separable(&mut rng, 120, 6, 0.05);
    let labels: Vec<Vec<usize>> = ys.iter().map(|&y| vec![y]).collect();
    let train = labeled("t", &xs[..80], labels[..80].to_vec());
    let val = labeled("v", &xs[80..], labels[80..].to_vec());
    let cfg = TrainConfig {
        max_epochs: 60,
        batch_size: 16,
        seed: 5,
        ..TrainConfig::default()
    };
    let t = train_probe(&train, Some(&val), TaskKind::Multiclass, &names(2), &cfg).unwrap();
    let table = val.score_table(&t.model).unwrap();
    let report = evaluate(&table, TaskKind::Multiclass, &[MetricKind::Accuracy]).unwrap();
    assert_eq!(Some(report.values[&MetricKind::Accuracy]), t.best_metric);
    assert!(t.best_epoch <= 60);

    let again = train_probe(&train, Some(&val), TaskKind::Multiclass, &names(2), &cfg).unwrap();
    assert_eq!(again.model, t.model);
    assert_eq!(again.losses, t.losses);
}

#[test]
fn bad_labels_are_rejected() {
    let set = labeled("x", &[vec![1.0], vec![2.0]], vec![vec![0], vec![5]]);
    assert!(matches!(
        train_probe(&set, None, TaskKind::Multiclass, &names(2), &TrainConfig::default()),
        Err(Error::LabelError(_))
    ));
    let two = labeled("x", &[vec![1.0]], vec![vec![0, 1]]);
    assert!(matches!(
        train_probe(&two, None, TaskKind::Multiclass, &names(2), &TrainConfig::default()),
        Err(Error::LabelError(_))
    ));
    let empty = LabeledSet::new(probekit::embedding::EmbeddingSet::new(1), vec![]).unwrap();
    assert!(matches!(
        train_probe(&empty, None, TaskKind::Multiclass, &names(2), &TrainConfig::default()),
        Err(Error::EmptyInput(_))
    ));
}

#[test]
fn model_files_round_trip() {
    let m = ProbeModel::new(
        array![[0.1, -2.5, 3.0], [1e-300, 0.0, -0.0]],
        array![0.25, -7.0],
        TaskKind::Multilabel,
        vec!["dog bark".into(), "siren".into()],
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.aprb");
    write_model(&m, &path).unwrap();
    assert_eq!(read_model(&path).unwrap(), m);
    let mut bytes = encode_model(&m).unwrap();
    assert_eq!(decode_model(&bytes).unwrap(), m);
    bytes[1] = b'Z';
    assert!(matches!(decode_model(&bytes), Err(Error::FormatError(_))));
    let bytes = encode_model(&m).unwrap();
    assert!(matches!(decode_model(&bytes[..30]), Err(Error::TruncatedFile(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn multiclass_gradient_matches_finite_differences(seed in any::<u64>()) {
        let (m, b, l2) = random_problem(seed, TaskKind::Multiclass);
        prop_assert!(gradient_error(&m, &b, l2) <= 1e-4);
    }

    #[test]
    fn multilabel_gradient_matches_finite_differences(seed in any::<u64>()) {
        let (m, b, l2) = random_problem(seed, TaskKind::Multilabel);
        prop_assert!(gradient_error(&m, &b, l2) <= 1e-4);
    }

    #[test]
    fn bias_shift_keeps_the_argmax(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let (m, b, _) = random_problem(seed, TaskKind::Multiclass);
        let shifted = ProbeModel::new(m.weights().clone(), m.bias() + shift, m.task(), m.class_names().to_vec()).unwrap();
        let argmax = |p: Array2<f64>| -> Vec<usize> {
            p.rows().into_iter().map(|r| {
                r.iter().enumerate().fold(0, |best, (j, &v)| if v > r[best] { j } else { best })
            }).collect()
        };
        prop_assert_eq!(argmax(m.predict_matrix(&b.features).unwrap()), argmax(shifted.predict_matrix(&b.features).unwrap()));
    }

    #[test]
    fn small_step_full_batch_loss_never_increases(seed in any::<u64>(), multilabel in any::<bool>()) {
        let task = if multilabel { TaskKind::Multilabel } else { TaskKind::Multiclass };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.gen_range(2..=4);
        let d = rng.gen_range(1..=8);
        let n = rng.gen_range(4..=20);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<Vec<usize>> = (0..n).map(|_| match task {
            TaskKind::Multiclass => vec![rng.gen_range(0..c)],
            TaskKind::Multilabel => (0..c).filter(|_| rng.gen_bool(0.5)).collect(),
        }).collect();
        let set = labeled("m", &xs, ys);
        let cfg = TrainConfig {
            max_epochs: 60,
            learning_rate: 0.1,
            momentum: 0.0,
            l2_lambda: 1e-3,
            ..TrainConfig::default()
        };
        let t = train_probe(&set, None, task, &names(c), &cfg).unwrap();
        for w in t.losses.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{} then {}", w[0], w[1]);
        }
    }
}
