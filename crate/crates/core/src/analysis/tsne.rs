use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabelVectorSet;
use crate::error::{Error, Result};

/// Exact t-SNE settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    /// `None` picks `min(30, 0.9 * (C - 1) / 3)`.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: None,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneOutput {
    /// `C × 2` embedding.
    pub coords: Array2<f64>,
    /// Row-stochastic conditional affinities `p_{j|i}`.
    pub conditional: Array2<f64>,
    /// Symmetrized joint affinities, summing to one.
    pub joint: Array2<f64>,
    pub perplexity: f64,
}

const ENTROPY_TOL: f64 = 1e-10;
const SEARCH_STEPS: usize = 200;

pub fn tsne(set: &LabelVectorSet, cfg: &TsneConfig) -> Result<TsneOutput> {
    let n = set.len();
    let bound = n.saturating_sub(1) as f64 / 3.0;
    let perplexity = cfg.perplexity.unwrap_or((0.9 * bound).min(30.0));
    if n < 4 || !(perplexity > 0.0 && perplexity < bound) {
        return Err(Error::InvalidPerplexity { perplexity, rows: n });
    }

    let x = set.matrix();
    let mut sq = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            sq[[i, j]] = d;
            sq[[j, i]] = d;
        }
    }

    let target = perplexity.ln();
    let mut conditional = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let row = row_affinities(&sq, i, target);
        conditional.row_mut(i).assign(&row);
    }
    let joint = (&conditional + &conditional.t()) / (2.0 * n as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y = Array2::from_shape_fn((n, 2), |_| 1e-4 * gaussian(&mut rng));
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let p_floor = joint.mapv(|p| p.max(1e-12));

    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iterations {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < cfg.exaggeration_iterations { 0.5 } else { 0.8 };

        let mut num = Array2::<f64>::zeros((n, n));
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dy0 = y[[i, 0]] - y[[j, 0]];
                let dy1 = y[[i, 1]] - y[[j, 1]];
                let q = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[[i, j]] = q;
                num[[j, i]] = q;
                total += 2.0 * q;
            }
        }

        let mut grad = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[[i, j]] / total).max(1e-12);
                let coeff = 4.0 * (exaggeration * p_floor[[i, j]] - q) * num[[i, j]];
                grad[[i, 0]] += coeff * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += coeff * (y[[i, 1]] - y[[j, 1]]);
            }
        }

        for ((g, u), gain) in grad.iter().zip(update.iter()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) {
                *gain + 0.2
            } else {
                (*gain * 0.8).max(0.01)
            };
        }
        update = &update * momentum - &(&gains * &grad) * cfg.learning_rate;
        y += &update;
        let mean = y.mean_axis(ndarray::Axis(0)).unwrap();
        y -= &mean;
    }

    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::DomainError("t-SNE produced non-finite coordinates".into()));
    }
    Ok(TsneOutput {
        coords: y,
        conditional,
        joint,
        perplexity,
    })
}

/// Gaussian conditional affinities of row `i` with entropy `target` (nats),
/// found by bisection on the precision.
fn row_affinities(sq: &Array2<f64>, i: usize, target: f64) -> Array1<f64> {
    let n = sq.nrows();
    let d_min = (0..n)
        .filter(|&j| j != i)
        .map(|j| sq[[i, j]])
        .fold(f64::INFINITY, f64::min);
    let eval = |beta: f64| -> (f64, Array1<f64>) {
        let mut p = Array1::zeros(n);
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let shifted = sq[[i, j]] - d_min;
            let v = (-beta * shifted).exp();
            p[j] = v;
            sum += v;
            weighted += v * shifted;
        }
        let entropy = sum.ln() + beta * weighted / sum;
        (entropy, p / sum)
    };

    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let (mut entropy, mut p) = eval(beta);
    for _ in 0..SEARCH_STEPS {
        if (entropy - target).abs() < ENTROPY_TOL {
            break;
        }
        if entropy > target {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        (entropy, p) = eval(beta);
    }
    p
}

/// Box-Muller standard normal draw.
fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn grid(n: usize) -> LabelVectorSet {
        let m = Array2::from_shape_fn((n, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 + i as f64 * 0.1);
        LabelVectorSet::new(m, (0..n).map(|i| format!("r{i}")).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_perplexity_and_tiny_sets() {
        let s = grid(10);
        let cfg = TsneConfig {
            perplexity: Some(3.0),
            ..TsneConfig::default()
        };
        assert!(matches!(tsne(&s, &cfg), Err(Error::InvalidPerplexity { .. })));
        assert!(matches!(
            tsne(&grid(3), &TsneConfig::default()),
            Err(Error::InvalidPerplexity { .. })
        ));
    }

    #[test]
    fn default_perplexity_is_clamped() {
        let cfg = TsneConfig {
            iterations: 10,
            ..TsneConfig::default()
        };
        let out = tsne(&grid(31), &cfg).unwrap();
        assert!((out.perplexity - 9.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_finite() {
        let cfg = TsneConfig {
            perplexity: Some(2.5),
            iterations: 300,
            seed: 4,
            ..TsneConfig::default()
        };
        let a = tsne(&grid(12), &cfg).unwrap();
        let b = tsne(&grid(12), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.coords.iter().all(|v| v.is_finite()));
        assert!((a.joint.sum() - 1.0).abs() < 1e-9);
    }
}
