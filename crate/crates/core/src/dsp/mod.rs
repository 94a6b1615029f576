//! Logmel frontend and spectrogram masking.
//!
//! Audio of any sample rate is first resampled to [`CANONICAL_RATE`], then
//! analysed with a Hann-windowed STFT whose hop is exactly one frame period.
//! Mel energies use the Slaney scale (linear below 1 kHz, logarithmic above)
//! with area-normalized triangular filters.

mod augment;
mod mel;
mod resample;
mod wav;

pub use augment::{spec_augment, spec_augment_with_masks, MaskFill, MaskRect, MaskSpec};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};
pub use resample::resample;
pub use wav::read_wav;

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Sample rate every clip is brought to before analysis.
pub const CANONICAL_RATE: u32 = 16_000;

/// A mono audio recording.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
    id: String,
}

impl AudioClip {
    pub fn new(id: impl Into<String>, samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if let Some(pos) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::DomainError(format!("non-finite sample at index {pos}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            id: id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Frontend parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub n_mels: usize,
    /// Frames per second; the hop is `CANONICAL_RATE / frame_rate` samples.
    pub frame_rate: u32,
    /// Analysis window length in seconds.
    pub window_length: f64,
    pub fmin: f64,
    pub fmax: f64,
    /// Natural-log floor applied to every mel energy.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            frame_rate: 40,
            window_length: 0.025,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10f64.ln(),
        }
    }
}

impl MelConfig {
    /// 64 bins at 100 frames per second.
    pub fn fine() -> Self {
        Self {
            frame_rate: 100,
            ..Self::default()
        }
    }

    pub fn hop_samples(&self) -> usize {
        (CANONICAL_RATE / self.frame_rate) as usize
    }

    pub fn window_samples(&self) -> usize {
        (self.window_length * CANONICAL_RATE as f64).round() as usize
    }

    pub fn fft_size(&self) -> usize {
        self.window_samples().next_power_of_two()
    }

    /// Checks the config against a clip recorded at `sample_rate`.
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if self.frame_rate == 0 || !CANONICAL_RATE.is_multiple_of(self.frame_rate) {
            return bad(format!(
                "frame rate {} does not divide {CANONICAL_RATE} Hz",
                self.frame_rate
            ));
        }
        if self.window_length.is_nan() || self.window_length <= 0.0 || self.window_samples() == 0 {
            return bad(format!("window length {} s too short", self.window_length));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax) {
            return bad(format!("need 0 <= fmin < fmax, got {}..{}", self.fmin, self.fmax));
        }
        let nyquist = sample_rate.min(CANONICAL_RATE) as f64 / 2.0;
        if self.fmax > nyquist {
            return bad(format!("fmax {} Hz exceeds Nyquist {nyquist} Hz", self.fmax));
        }
        if !self.log_floor.is_finite() {
            return bad("log_floor must be finite".into());
        }
        Ok(())
    }
}

/// Frames × mel-bin log energies.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub values: Array2<f64>,
    pub frame_rate: f64,
    pub log_floor: f64,
    pub clip_id: String,
}

impl LogMelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }
}

/// Number of frames for `n_samples` at `sample_rate`: `ceil(duration * frame_rate)`.
pub fn frame_count(n_samples: usize, sample_rate: u32, frame_rate: u32) -> usize {
    let num = n_samples as u128 * frame_rate as u128;
    num.div_ceil(sample_rate as u128) as usize
}

/// Computes the logmel spectrogram of `clip`.
pub fn compute_logmel(clip: &AudioClip, cfg: &MelConfig) -> Result<LogMelSpectrogram> {
    if clip.samples.is_empty() {
        return Err(Error::EmptyInput(format!("clip `{}` has no samples", clip.id)));
    }
    cfg.validate(clip.sample_rate)?;

    let signal = resample(&clip.samples, clip.sample_rate, CANONICAL_RATE);
    let n_frames = frame_count(clip.samples.len(), clip.sample_rate, cfg.frame_rate);
    let hop = cfg.hop_samples();
    let win = cfg.window_samples();
    let n_fft = cfg.fft_size();
    let window = hann(win);
    let bank = MelFilterbank::new(cfg.n_mels, n_fft, CANONICAL_RATE as f64, cfg.fmin, cfg.fmax);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let floor_energy = cfg.log_floor.exp();

    let mut values = Array2::zeros((n_frames, cfg.n_mels));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_fft / 2 + 1];
    for (t, mut row) in values.rows_mut().into_iter().enumerate() {
        // frame t is centred on the middle of its hop interval
        let start = (t * hop + hop / 2) as isize - (win / 2) as isize;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, w) in window.iter().enumerate() {
            let idx = start + i as isize;
            if idx >= 0 && (idx as usize) < signal.len() {
                buf[i].re = signal[idx as usize] * w;
            }
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for (m, cell) in row.iter_mut().enumerate() {
            let e = bank.apply(m, &power);
            *cell = if e <= floor_energy { cfg.log_floor } else { e.ln() };
        }
    }

    Ok(LogMelSpectrogram {
        values,
        frame_rate: cfg.frame_rate as f64,
        log_floor: cfg.log_floor,
        clip_id: clip.id.clone(),
    })
}

/// Periodic Hann window.
fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}
