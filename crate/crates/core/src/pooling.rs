//! Frame-to-clip aggregation.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// `T × K` values, frames by channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub values: Array2<f64>,
    pub frame_rate: f64,
}

impl FrameSequence {
    pub fn new(values: Array2<f64>, frame_rate: f64) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::EmptyInput("frame sequence has no frames".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("frame values must be finite".into()));
        }
        Ok(Self { values, frame_rate })
    }

    pub fn from_rows(rows: &[Vec<f64>], frame_rate: f64) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeError("ragged frame rows".into()));
        }
        let flat = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), k), flat)
            .map_err(|e| Error::ShapeError(e.to_string()))?;
        Self::new(values, frame_rate)
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }

    fn check_probabilities(&self) -> Result<()> {
        match self.values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            Some(p) => Err(Error::DomainError(format!("probability {p} outside [0, 1]"))),
            None => Ok(()),
        }
    }
}

pub fn average_pool(fs: &FrameSequence) -> Vec<f64> {
    let n = fs.n_frames() as f64;
    fs.values
        .sum_axis(Axis(0))
        .into_iter()
        .map(|s| s / n)
        .collect()
}

pub fn max_pool(fs: &FrameSequence) -> Vec<f64> {
    fs.values
        .columns()
        .into_iter()
        .map(|c| c.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
        .collect()
}

/// Error-free accumulation (Neumaier sum, FMA products), so short
/// sums round once instead of once per term.
#[derive(Default, Clone, Copy)]
struct Compensated {
    hi: f64,
    lo: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.hi + x;
        self.lo += if self.hi.abs() >= x.abs() {
            (self.hi - t) + x
        } else {
            (x - t) + self.hi
        };
        self.hi = t;
    }

    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        self.add(p);
        self.lo += a.mul_add(b, -p);
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

fn clamp_to_range(v: f64, values: impl Iterator<Item = f64> + Clone) -> f64 {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    v.clamp(lo, hi)
}

/// `y_c = Σ_t p_tc² / Σ_t p_tc`, with `y_c = 0` when a channel is all zero.
pub fn linear_softmax_pool(probs: &FrameSequence) -> Result<Vec<f64>> {
    probs.check_probabilities()?;
    Ok(probs
        .values
        .columns()
        .into_iter()
        .map(|c| {
            let mut sq = Compensated::default();
            let mut s = Compensated::default();
            for &p in c {
                sq.add_product(p, p);
                s.add(p);
            }
            let s = s.value();
            if s == 0.0 {
                0.0
            } else {
                clamp_to_range(sq.value() / s, c.iter().copied())
            }
        })
        .collect())
}

/// `y_c = Σ_t w_tc p_tc / Σ_t w_tc` with externally supplied non-negative weights.
pub fn attention_pool(probs: &FrameSequence, weights: &FrameSequence) -> Result<Vec<f64>> {
    if probs.values.dim() != weights.values.dim() {
        return Err(Error::ShapeError(format!(
            "probabilities {:?} vs weights {:?}",
            probs.values.dim(),
            weights.values.dim()
        )));
    }
    probs.check_probabilities()?;
    if let Some(w) = weights.values.iter().find(|w| **w < 0.0) {
        return Err(Error::DomainError(format!("negative attention weight {w}")));
    }
    probs
        .values
        .columns()
        .into_iter()
        .zip(weights.values.columns())
        .enumerate()
        .map(|(channel, (p, w))| {
            let total: f64 = w.sum();
            if total <= 0.0 {
                return Err(Error::ZeroWeight { channel });
            }
            let mean = p.iter().zip(w.iter()).map(|(p, w)| p * w).sum::<f64>() / total;
            Ok(clamp_to_range(mean, p.iter().copied()))
        })
        .collect()
}
