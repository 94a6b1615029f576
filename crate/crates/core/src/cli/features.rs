use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use super::{digest_input, usage, write_text, CliResult, RunConfig};
use crate::dsp::{compute_logmel, read_wav, spec_augment_with_masks, MaskFill, MaskRect, MaskSpec, MelConfig};
use crate::embedding::{write_embeddings, Embedding, EmbeddingSet};
use crate::error::{Error, Result};
use crate::harness::derive_seed;
use crate::matrix_io::{read_spectrogram, write_spectrogram};
use crate::pooling::{average_pool, max_pool, FrameSequence};

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Directory of .wav files.
    #[arg(long, value_name = "DIR")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub n_mels: Option<usize>,
    /// Frames per second.
    #[arg(long)]
    pub frame_rate: Option<u32>,
    #[arg(long)]
    pub fmin: Option<f64>,
    #[arg(long)]
    pub fmax: Option<f64>,
    /// Apply one frequency and one time mask per clip, seeded by --seed.
    #[arg(long)]
    pub augment: bool,
    #[arg(long)]
    pub max_freq_bins: Option<usize>,
    #[arg(long)]
    pub max_time_seconds: Option<f64>,
    /// Masked-cell value: floor or mean.
    #[arg(long)]
    pub mask_fill: Option<FillArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FillArg(MaskFill);

impl FromStr for FillArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "floor" | "log-floor" => Ok(FillArg(MaskFill::LogFloor)),
            "mean" => Ok(FillArg(MaskFill::Mean)),
            other => Err(Error::InvalidConfig(format!("unknown mask fill `{other}`"))),
        }
    }
}

impl fmt::Display for FillArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            MaskFill::LogFloor => "floor",
            MaskFill::Mean => "mean",
        })
    }
}

#[derive(Serialize)]
struct IndexEntry {
    clip_id: String,
    file: String,
    frames: usize,
    mels: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    masks: Vec<MaskEntry>,
}

#[derive(Serialize)]
struct MaskEntry {
    axis: &'static str,
    start: usize,
    width: usize,
}

impl From<&MaskRect> for MaskEntry {
    fn from(r: &MaskRect) -> Self {
        match *r {
            MaskRect::Freq { start, width } => MaskEntry {
                axis: "freq",
                start,
                width,
            },
            MaskRect::Time { start, width } => MaskEntry {
                axis: "time",
                start,
                width,
            },
        }
    }
}

#[derive(Serialize)]
struct FeatureIndex {
    clips: Vec<IndexEntry>,
    failed: Vec<String>,
}

/// Files in `dir` whose extension matches `ext`, sorted by name.
fn list_files(dir: &Path, ext: &str) -> CliResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(usage(format!("{} is not a directory", dir.display())));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case(ext))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Stable 64-bit FNV-1a hash of a clip id.
fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn run_features(rc: &mut RunConfig, args: FeaturesArgs) -> CliResult<()> {
    let input = rc.require_path("input", args.input)?;
    let defaults = MelConfig::default();
    let cfg = MelConfig {
        n_mels: rc.take_or("n-mels", args.n_mels, defaults.n_mels)?,
        frame_rate: rc.take_or("frame-rate", args.frame_rate, defaults.frame_rate)?,
        fmin: rc.take_or("fmin", args.fmin, defaults.fmin)?,
        fmax: rc.take_or("fmax", args.fmax, defaults.fmax)?,
        ..defaults
    };
    let augment = rc.take_switch("augment", args.augment)?;
    let mask_defaults = MaskSpec::default();
    let mask = MaskSpec {
        max_freq_bins: rc.take_or("max-freq-bins", args.max_freq_bins, mask_defaults.max_freq_bins)?,
        max_time_seconds: rc.take_or("max-time-seconds", args.max_time_seconds, mask_defaults.max_time_seconds)?,
        fill: rc.take_or("mask-fill", args.mask_fill, FillArg(mask_defaults.fill))?.0,
        ..mask_defaults
    };
    rc.finish()?;
    cfg.validate(crate::dsp::CANONICAL_RATE)?;

    let files = list_files(&input, "wav")?;
    if files.is_empty() {
        return Err(usage(format!("no .wav files in {}", input.display())));
    }
    let mut ids = std::collections::HashSet::new();
    for f in &files {
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if !ids.insert(stem.clone()) {
            return Err(usage(format!("two input files share the clip id `{stem}`")));
        }
    }
    rc.create_out()?;

    let seed = rc.seed;
    let out = rc.out.clone();
    let results: Vec<std::result::Result<IndexEntry, String>> = files
        .par_iter()
        .map(|path| {
            let name = file_name(path);
            let work = || -> Result<IndexEntry> {
                let clip = read_wav(path)?;
                let mut spec = compute_logmel(&clip, &cfg)?;
                let mut masks = Vec::new();
                if augment {
                    let (masked, rects) =
                        spec_augment_with_masks(&spec, &mask, derive_seed(seed, fnv1a(clip.id()), 2));
                    spec = masked;
                    masks = rects.iter().map(MaskEntry::from).collect();
                }
                let file = format!("{}.amat", clip.id());
                write_spectrogram(&spec, &out.join(&file))?;
                Ok(IndexEntry {
                    clip_id: clip.id().to_string(),
                    file,
                    frames: spec.n_frames(),
                    mels: spec.n_mels(),
                    masks,
                })
            };
            work().map_err(|e| {
                log::warn!("skipping {name}: {e}");
                name
            })
        })
        .collect();

    let mut index = FeatureIndex {
        clips: Vec::new(),
        failed: Vec::new(),
    };
    for r in results {
        match r {
            Ok(entry) => index.clips.push(entry),
            Err(name) => index.failed.push(name),
        }
    }
    if index.clips.is_empty() {
        return Err(Error::Audio(format!("none of the {} input files could be processed", files.len())).into());
    }
    let mut text = serde_json::to_string_pretty(&index).map_err(Error::from)?;
    text.push('\n');
    write_text(&rc.out, "index.json", &text)?;

    let mut inputs = BTreeMap::new();
    for f in &files {
        digest_input(&mut inputs, &file_name(f), f)?;
    }
    rc.write_provenance(&inputs, Some(serde_json::json!({ "clips": index.clips.len(), "failed": index.failed })))?;
    println!("{} spectrograms written to {}", index.clips.len(), rc.out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Avg,
    Max,
    /// Average and max pooled vectors concatenated.
    AvgMax,
}

impl FromStr for Pool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" | "average" | "mean" => Ok(Pool::Avg),
            "max" => Ok(Pool::Max),
            "avgmax" | "avg+max" => Ok(Pool::AvgMax),
            other => Err(Error::InvalidConfig(format!("unknown pooling `{other}`"))),
        }
    }
}

impl fmt::Display for Pool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pool::Avg => "avg",
            Pool::Max => "max",
            Pool::AvgMax => "avgmax",
        })
    }
}

impl Pool {
    fn apply(self, fs: &FrameSequence) -> Vec<f64> {
        match self {
            Pool::Avg => average_pool(fs),
            Pool::Max => max_pool(fs),
            Pool::AvgMax => {
                let mut v = average_pool(fs);
                v.extend(max_pool(fs));
                v
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Directory of .amat spectrograms.
    #[arg(long, value_name = "DIR")]
    pub input: Option<PathBuf>,
    /// avg, max or avgmax.
    #[arg(long)]
    pub pool: Option<Pool>,
    /// Source tag stored with every vector.
    #[arg(long)]
    pub tag: Option<String>,
}

pub fn run_embed(rc: &mut RunConfig, args: EmbedArgs) -> CliResult<()> {
    let input = rc.require_path("input", args.input)?;
    let pool = rc.take_or("pool", args.pool, Pool::Avg)?;
    let tag = rc.take_or("tag", args.tag, format!("logmel-{pool}"))?;
    rc.forget("seed");
    rc.finish()?;

    let files = list_files(&input, "amat")?;
    if files.is_empty() {
        return Err(usage(format!("no .amat files in {}", input.display())));
    }
    let items = files
        .par_iter()
        .map(|path| -> Result<Embedding> {
            let spec = read_spectrogram(path)?;
            let fs = FrameSequence::new(spec.values, spec.frame_rate)?;
            Ok(Embedding::new(spec.clip_id, pool.apply(&fs)).with_tag(tag.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = items[0].dim();
    let set = EmbeddingSet::from_items(dim, items)?;
    rc.create_out()?;
    let path = rc.out.join("embeddings.aemb");
    write_embeddings(&set, &path)?;

    let mut inputs = BTreeMap::new();
    for f in &files {
        digest_input(&mut inputs, &file_name(f), f)?;
    }
    rc.write_provenance(&inputs, Some(serde_json::json!({ "items": set.len(), "dim": dim })))?;
    println!("{} embeddings of dimension {dim} written to {}", set.len(), path.display());
    Ok(())
}
