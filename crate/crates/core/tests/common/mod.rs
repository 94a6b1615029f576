//! Shared oracles and synthetic data for the integration tests.
#![allow(dead_code)]

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use probekit::analysis::LabelVectorSet;
use probekit::embedding::{Embedding, EmbeddingSet};
use probekit::harness::{DatasetManifest, ManifestHeader, ManifestItem, Split};
use probekit::probe::{loss_and_grad, Batch, LabeledSet, ProbeModel, TaskKind};

/// True when `j` outranks `i` under the descending-score, lower-index-first rule.
fn outranks(scores: &[f64], j: usize, i: usize) -> bool {
    scores[j] > scores[i] || (scores[j] == scores[i] && j < i)
}

/// Average precision straight from the definition: for each positive,
/// precision among the items ranked at or above it.
pub fn naive_ap(scores: &[f64], truths: &[bool]) -> Option<f64> {
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| truths[i]).collect();
    if positives.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &i in &positives {
        let above: Vec<usize> = (0..scores.len()).filter(|&j| j == i || outranks(scores, j, i)).collect();
        let hits = above.iter().filter(|&&j| truths[j]).count();
        total += hits as f64 / above.len() as f64;
    }
    Some(total / positives.len() as f64)
}

/// AUC by counting every positive/negative pair.
pub fn naive_auc(scores: &[f64], truths: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for p in (0..scores.len()).filter(|&i| truths[i]) {
        for n in (0..scores.len()).filter(|&i| !truths[i]) {
            pairs += 1;
            if scores[p] > scores[n] {
                wins += 1.0;
            } else if scores[p] == scores[n] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

fn column(m: &Array2<f64>, c: usize) -> Vec<f64> {
    m.column(c).to_vec()
}

fn truth_column(m: &Array2<bool>, c: usize) -> Vec<bool> {
    m.column(c).to_vec()
}

fn mean_of(values: Vec<f64>) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn naive_map(scores: &Array2<f64>, truths: &Array2<bool>) -> f64 {
    mean_of(
        (0..scores.ncols())
            .filter_map(|c| naive_ap(&column(scores, c), &truth_column(truths, c)))
            .collect(),
    )
}

pub fn naive_mauc(scores: &Array2<f64>, truths: &Array2<bool>) -> f64 {
    mean_of(
        (0..scores.ncols())
            .filter_map(|c| naive_auc(&column(scores, c), &truth_column(truths, c)))
            .collect(),
    )
}

/// Label-weighted label-ranking average precision over all (item, label) pairs.
pub fn naive_lwlrap(scores: &Array2<f64>, truths: &Array2<bool>) -> f64 {
    let mut precisions = Vec::new();
    for i in 0..scores.nrows() {
        let row = scores.row(i).to_vec();
        for l in (0..row.len()).filter(|&l| truths[[i, l]]) {
            let above: Vec<usize> = (0..row.len()).filter(|&c| c == l || outranks(&row, c, l)).collect();
            let hits = above.iter().filter(|&&c| truths[[i, c]]).count();
            precisions.push(hits as f64 / above.len() as f64);
        }
    }
    mean_of(precisions)
}

pub fn naive_top_k(scores: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| {
            let row = scores.row(i).to_vec();
            let better = (0..row.len()).filter(|&c| outranks(&row, c, l)).count();
            better < k
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// Scores drawn from a coarse grid half of the time so that ties are common.
pub fn random_score(rng: &mut ChaCha8Rng, coarse: bool) -> f64 {
    if coarse {
        rng.gen_range(0..5) as f64 / 4.0
    } else {
        rng.gen::<f64>()
    }
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Unit-direction labelled data split by the hyperplane `w·x = 0` with a
/// guaranteed margin; labels 0/1 by side.
pub fn separable(rng: &mut ChaCha8Rng, n: usize, dim: usize, margin: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut w: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v /= norm);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    while xs.len() < n {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        if d.abs() >= margin {
            ys.push(usize::from(d > 0.0));
            xs.push(x);
        }
    }
    (xs, ys)
}

pub fn labeled(prefix: &str, xs: &[Vec<f64>], labels: Vec<Vec<usize>>) -> LabeledSet {
    let dim = xs.first().map_or(0, Vec::len);
    let items = xs
        .iter()
        .enumerate()
        .map(|(i, x)| Embedding::new(format!("{prefix}{i}"), x.clone()));
    LabeledSet::new(EmbeddingSet::from_items(dim, items).unwrap(), labels).unwrap()
}

/// Mono 16-bit WAV of a sine with a little noise.
pub fn write_sine_wav(path: &Path, freq: f64, seconds: f64, sample_rate: u32, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    let n = (seconds * sample_rate as f64).round() as usize;
    for i in 0..n {
        let t = i as f64 / sample_rate as f64;
        let v = 0.3 * (2.0 * std::f64::consts::PI * freq * t).sin() + 0.01 * gaussian(&mut rng);
        w.write_sample((v * 32767.0).round() as i16).unwrap();
    }
    w.finalize().unwrap();
}

/// Gaussian class clusters spread over `folds` predefined folds. Items cycle
/// through the classes and each run of `classes` items shares a fold, so
/// every fold is class-balanced.
pub fn clustered_cv_data(
    seed: u64,
    folds: usize,
    per_fold: usize,
    classes: usize,
    dim: usize,
    spread: f64,
) -> (DatasetManifest, EmbeddingSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..classes).map(|_| (0..dim).map(|_| gaussian(&mut rng)).collect()).collect();
    let names: Vec<String> = (0..classes).map(|c| format!("class{c}")).collect();
    let mut items = Vec::new();
    let mut set = EmbeddingSet::new(dim);
    for i in 0..folds * per_fold {
        let c = i % classes;
        let id = format!("clip{i:04}");
        let v = centres[c].iter().map(|m| m + spread * gaussian(&mut rng)).collect();
        set.push(Embedding::new(id.clone(), v)).unwrap();
        items.push(ManifestItem::new(id, &[names[c].as_str()]).with_fold((i / classes % folds) as u32 + 1));
    }
    let header = ManifestHeader {
        task: TaskKind::Multiclass,
        class_names: names,
        carve_val: None,
    };
    (DatasetManifest::new(header, items).unwrap(), set)
}

/// Same clusters, assigned to train/val/test in the ratio `a:b:c` by position.
pub fn clustered_split_data(seed: u64, ratio: [usize; 3], classes: usize, dim: usize) -> (DatasetManifest, EmbeddingSet) {
    let total: usize = ratio.iter().sum();
    let (m, set) = clustered_cv_data(seed, 1, total, classes, dim, 0.2);
    let items = m
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let split = if i < ratio[0] {
                Split::Train
            } else if i < ratio[0] + ratio[1] {
                Split::Val
            } else {
                Split::Test
            };
            ManifestItem {
                fold: None,
                ..item.clone()
            }
            .with_split(split)
        })
        .collect();
    (DatasetManifest::new(m.header.clone(), items).unwrap(), set)
}

/// `k` random centroids (scaled to pairwise separation about `separation`)
/// with `per` noisy copies each; returns the set and the planted cluster of
/// every row. Row `i` belongs to cluster `i % k`.
pub fn planted_clusters(
    seed: u64,
    k: usize,
    per: usize,
    dim: usize,
    separation: f64,
    noise: f64,
) -> (LabelVectorSet, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // random directions in high dimension are close to orthogonal, so unit
    // centroids scaled by sep/sqrt(2) sit about `separation` apart
    let centroids: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm * separation / 2f64.sqrt()).collect()
        })
        .collect();
    let n = k * per;
    let truth: Vec<usize> = (0..n).map(|i| i % k).collect();
    let m = Array2::from_shape_fn((n, dim), |(i, j)| centroids[truth[i]][j] + noise * gaussian(&mut rng));
    let names = (0..n).map(|i| format!("label{i:02}")).collect();
    (LabelVectorSet::new(m, names).unwrap(), truth)
}

/// True when two flat clusterings describe the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut map = std::collections::HashMap::new();
    let mut back = std::collections::HashMap::new();
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| *map.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

/// Fraction of points whose nearest 2-D blob centroid is their own blob.
pub fn nearest_centroid_purity(coords: &Array2<f64>, blob: &[usize], blobs: usize) -> f64 {
    let mut sums = vec![[0.0f64; 2]; blobs];
    let mut counts = vec![0usize; blobs];
    for (row, &b) in coords.rows().into_iter().zip(blob) {
        sums[b][0] += row[0];
        sums[b][1] += row[1];
        counts[b] += 1;
    }
    let centres: Vec<[f64; 2]> = sums.iter().zip(&counts).map(|(s, &c)| [s[0] / c as f64, s[1] / c as f64]).collect();
    let hits = coords
        .rows()
        .into_iter()
        .zip(blob)
        .filter(|(row, &b)| {
            let d = |c: &[f64; 2]| (row[0] - c[0]).powi(2) + (row[1] - c[1]).powi(2);
            (0..blobs).all(|o| o == b || d(&centres[b]) < d(&centres[o]))
        })
        .count();
    hits as f64 / blob.len() as f64
}

/// Path of the built command-line binary.
pub fn probekit_bin() -> &'static str {
    env!("CARGO_BIN_EXE_probekit")
}

/// Runs the binary and returns (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(probekit_bin())
        .args(args)
        .env("PROBEKIT_LOG", "error")
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

pub const TONE_CLASSES: [&str; 3] = ["low", "mid", "high"];
const TONE_FREQS: [f64; 3] = [300.0, 1200.0, 4000.0];

/// Writes `per_class` short tone clips per class into `dir/wav` plus two
/// manifests: `cv.jsonl` (two folds) and `split.jsonl` (train/val/test).
pub fn tone_dataset(dir: &Path, per_class: usize) {
    let wav = dir.join("wav");
    std::fs::create_dir_all(&wav).unwrap();
    let header = ManifestHeader {
        task: TaskKind::Multiclass,
        class_names: TONE_CLASSES.map(String::from).to_vec(),
        carve_val: None,
    };
    let mut cv = Vec::new();
    let mut split = Vec::new();
    for i in 0..per_class * 3 {
        let c = i % 3;
        let id = format!("tone{i:03}");
        let freq = TONE_FREQS[c] * (1.0 + 0.02 * (i / 3) as f64);
        write_sine_wav(&wav.join(format!("{id}.wav")), freq, 0.5, 16_000, i as u64);
        let item = ManifestItem::new(id.clone(), &[TONE_CLASSES[c]]);
        cv.push(item.clone().with_fold((i / 3 % 2) as u32 + 1));
        let part = match (i / 3) % 4 {
            0 | 1 => Split::Train,
            2 => Split::Val,
            _ => Split::Test,
        };
        split.push(item.with_split(part));
    }
    DatasetManifest::new(header.clone(), cv).unwrap().write(&dir.join("cv.jsonl")).unwrap();
    DatasetManifest::new(header, split).unwrap().write(&dir.join("split.jsonl")).unwrap();
}

pub fn random_multilabel(seed: u64, n: usize, c: usize) -> (Array2<f64>, Array2<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = rng.gen_bool(0.5);
    let scores = Array2::from_shape_fn((n, c), |_| random_score(&mut rng, coarse));
    let density = rng.gen_range(0.1..0.7);
    let truths = Array2::from_shape_fn((n, c), |_| rng.gen_bool(density));
    (scores, truths)
}

pub fn random_multiclass(seed: u64, n: usize, c: usize) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = rng.gen_bool(0.5);
    let scores = Array2::from_shape_fn((n, c), |_| random_score(&mut rng, coarse));
    let labels = (0..n).map(|_| rng.gen_range(0..c)).collect();
    (scores, labels)
}

pub fn names(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("class{i}")).collect()
}

pub fn random_problem(seed: u64, task: TaskKind) -> (ProbeModel, Batch, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.gen_range(2..=5);
    let d = rng.gen_range(1..=8);
    let n = rng.gen_range(1..=20);
    let w = Array2::from_shape_fn((c, d), |_| rng.gen_range(-1.0..1.0));
    let b = Array1::from_shape_fn(c, |_| rng.gen_range(-1.0..1.0));
    let model = ProbeModel::new(w, b, task, names(c)).unwrap();
    let features = Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0));
    let mut targets = Array2::zeros((n, c));
    for i in 0..n {
        match task {
            TaskKind::Multiclass => targets[[i, rng.gen_range(0..c)]] = 1.0,
            TaskKind::Multilabel => (0..c).for_each(|j| targets[[i, j]] = f64::from(u8::from(rng.gen_bool(0.4)))),
        }
    }
    (model, Batch { features, targets }, rng.gen_range(0.0..0.1))
}

/// Central differences over every weight and bias, compared as whole vectors.
pub fn gradient_error(model: &ProbeModel, batch: &Batch, l2: f64) -> f64 {
    let h = 1e-5;
    let g = loss_and_grad(model, batch, l2);
    let mut analytic = g.grad_weights.iter().copied().collect::<Vec<_>>();
    analytic.extend(g.grad_bias.iter());
    let mut numeric = Vec::with_capacity(analytic.len());
    let (c, d) = model.weights().dim();
    let shifted = |dw: Option<(usize, usize)>, db: Option<usize>, delta: f64| {
        let mut w = model.weights().clone();
        let mut b = model.bias().clone();
        if let Some(ix) = dw {
            w[ix] += delta;
        }
        if let Some(ix) = db {
            b[ix] += delta;
        }
        let m = ProbeModel::new(w, b, model.task(), model.class_names().to_vec()).unwrap();
        loss_and_grad(&m, batch, l2).loss
    };
    for i in 0..c {
        for j in 0..d {
            numeric.push((shifted(Some((i, j)), None, h) - shifted(Some((i, j)), None, -h)) / (2.0 * h));
        }
    }
    for i in 0..c {
        numeric.push((shifted(None, Some(i), h) - shifted(None, Some(i), -h)) / (2.0 * h));
    }
    let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}
