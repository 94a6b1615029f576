use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LogMelSpectrogram;

/// Value written into masked cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskFill {
    #[default]
    LogFloor,
    /// Mean over all cells of the input spectrogram.
    Mean,
}

/// Frequency/time masking parameters. Mask widths are drawn uniformly from
/// the integers `0..=max`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub max_freq_bins: usize,
    pub max_time_seconds: f64,
    pub n_freq_masks: usize,
    pub n_time_masks: usize,
    pub fill: MaskFill,
}

impl Default for MaskSpec {
    /// One band of at most 16 bins and one interval of at most 2 seconds.
    fn default() -> Self {
        Self {
            max_freq_bins: 16,
            max_time_seconds: 2.0,
            n_freq_masks: 1,
            n_time_masks: 1,
            fill: MaskFill::LogFloor,
        }
    }
}

impl MaskSpec {
    pub fn max_time_frames(&self, frame_rate: f64) -> usize {
        (self.max_time_seconds.max(0.0) * frame_rate).floor() as usize
    }
}

/// A masked region. Frequency masks span every frame, time masks span every bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRect {
    Freq { start: usize, width: usize },
    Time { start: usize, width: usize },
}

impl MaskRect {
    pub fn width(&self) -> usize {
        match *self {
            MaskRect::Freq { width, .. } | MaskRect::Time { width, .. } => width,
        }
    }

    pub fn contains(&self, frame: usize, bin: usize) -> bool {
        match *self {
            MaskRect::Freq { start, width } => (start..start + width).contains(&bin),
            MaskRect::Time { start, width } => (start..start + width).contains(&frame),
        }
    }
}

/// Masks `spec` and returns the result, deterministic in `seed`.
pub fn spec_augment(spec: &LogMelSpectrogram, mask: &MaskSpec, seed: u64) -> LogMelSpectrogram {
    spec_augment_with_masks(spec, mask, seed).0
}

/// Like [`spec_augment`], also returning the drawn rectangles.
pub fn spec_augment_with_masks(
    spec: &LogMelSpectrogram,
    mask: &MaskSpec,
    seed: u64,
) -> (LogMelSpectrogram, Vec<MaskRect>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_frames, n_bins) = spec.values.dim();
    let mut rects = Vec::with_capacity(mask.n_freq_masks + mask.n_time_masks);

    for _ in 0..mask.n_freq_masks {
        let width = rng.gen_range(0..=mask.max_freq_bins).min(n_bins);
        let start = rng.gen_range(0..=n_bins - width);
        rects.push(MaskRect::Freq { start, width });
    }
    let max_frames = mask.max_time_frames(spec.frame_rate);
    for _ in 0..mask.n_time_masks {
        let width = rng.gen_range(0..=max_frames).min(n_frames);
        let start = rng.gen_range(0..=n_frames - width);
        rects.push(MaskRect::Time { start, width });
    }

    let fill = match mask.fill {
        MaskFill::LogFloor => spec.log_floor,
        MaskFill::Mean => spec.values.mean().unwrap_or(spec.log_floor),
    };
    let mut out = spec.clone();
    for rect in &rects {
        match *rect {
            MaskRect::Freq { start, width } => {
                for mut col in out.values.columns_mut().into_iter().skip(start).take(width) {
                    col.fill(fill);
                }
            }
            MaskRect::Time { start, width } => {
                for mut row in out.values.rows_mut().into_iter().skip(start).take(width) {
                    row.fill(fill);
                }
            }
        }
    }
    (out, rects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ramp(frames: usize, bins: usize) -> LogMelSpectrogram {
        LogMelSpectrogram {
            values: Array2::from_shape_fn((frames, bins), |(t, m)| (t * bins + m) as f64),
            frame_rate: 40.0,
            log_floor: -23.0,
            clip_id: "ramp".into(),
        }
    }

    #[test]
    fn zero_width_masks_are_identity() {
        let spec = ramp(50, 64);
        let mask = MaskSpec {
            max_freq_bins: 0,
            max_time_seconds: 0.0,
            ..MaskSpec::default()
        };
        for seed in 0..20 {
            assert_eq!(spec_augment(&spec, &mask, seed), spec);
        }
    }

    #[test]
    fn same_seed_same_output() {
        let spec = ramp(200, 64);
        let mask = MaskSpec::default();
        assert_eq!(spec_augment(&spec, &mask, 9), spec_augment(&spec, &mask, 9));
    }

    #[test]
    fn mean_fill_uses_input_mean() {
        let spec = ramp(10, 4);
        let mask = MaskSpec {
            max_freq_bins: 4,
            max_time_seconds: 0.0,
            n_time_masks: 0,
            fill: MaskFill::Mean,
            ..MaskSpec::default()
        };
        let mean = spec.values.mean().unwrap();
        for seed in 0..10 {
            let (out, rects) = spec_augment_with_masks(&spec, &mask, seed);
            for t in 0..10 {
                for m in 0..4 {
                    if rects[0].contains(t, m) {
                        assert_eq!(out.values[[t, m]], mean);
                    }
                }
            }
        }
    }

    #[test]
    fn masks_wider_than_the_spectrogram_are_clipped() {
        let spec = ramp(3, 2);
        let (_, rects) = spec_augment_with_masks(&spec, &MaskSpec::default(), 1);
        assert!(rects.iter().all(|r| match r {
            MaskRect::Freq { start, width } => start + width <= 2,
            MaskRect::Time { start, width } => start + width <= 3,
        }));
    }
}
