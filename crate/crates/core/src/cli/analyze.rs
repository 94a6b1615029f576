use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;

use super::probe::{load_model, model_paths};
use super::{digest_input, write_text, CliResult, RunConfig};
use crate::analysis::{
    agglomerate, cosine_matrix, csv_field, extract_label_vectors, mv_normalize, render_dendrogram, render_heatmap,
    tsne, Dendrogram, DendrogramStyle, Distance, LabelVectorSet, Linkage, MvAxis, TsneConfig,
};
use crate::embedding::DEFAULT_EPSILON;
use crate::error::{Error, Result};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory written by `probe train`, or its model file.
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Compare against the label vectors of a second model.
    #[arg(long, value_name = "PATH")]
    pub cosine: Option<PathBuf>,
    /// average, single or complete.
    #[arg(long)]
    pub linkage: Option<Linkage>,
    /// cosine or euclidean.
    #[arg(long)]
    pub distance: Option<Distance>,
    /// Mean-variance normalization axis: dimensions, rows or none.
    #[arg(long)]
    pub normalize: Option<Normalization>,
    /// Colour this many clusters in the dendrogram.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// t-SNE perplexity; without it t-SNE is skipped for fewer than 4 labels.
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Normalization(Option<MvAxis>);

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization(None)),
            other => other.parse().map(|a| Normalization(Some(a))),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            None => "none",
            Some(MvAxis::Dimensions) => "dimensions",
            Some(MvAxis::Rows) => "rows",
        })
    }
}

fn prepare(set: LabelVectorSet, norm: Normalization) -> Result<LabelVectorSet> {
    match norm.0 {
        Some(axis) => mv_normalize(&set, axis, DEFAULT_EPSILON),
        None => Ok(set),
    }
}

/// Height that leaves `k` clusters, if the tree has more than `k` leaves.
fn cut_height(d: &Dendrogram, k: usize) -> Option<f64> {
    let n = d.n_leaves();
    (k >= 1 && k < n).then(|| d.merges()[n - k - 1].height)
}

pub fn run_analyze(rc: &mut RunConfig, args: AnalyzeArgs) -> CliResult<()> {
    let model_path = rc.require_path("model", args.model)?;
    let other_path = rc.take_path("cosine", args.cosine)?;
    if let Some(p) = &other_path {
        super::require_path("cosine", p)?;
    }
    let linkage = rc.take_or("linkage", args.linkage, Linkage::Average)?;
    let distance = rc.take_or("distance", args.distance, Distance::Cosine)?;
    let norm = rc.take_or("normalize", args.normalize, Normalization(Some(MvAxis::Dimensions)))?;
    let clusters = rc.take("clusters", args.clusters)?;
    let perplexity = rc.take("perplexity", args.perplexity)?;
    let defaults = TsneConfig::default();
    let iterations = rc.take_or("iterations", args.iterations, defaults.iterations)?;
    rc.finish()?;

    let mut inputs = BTreeMap::new();
    let (model, _) = load_model(&model_path)?;
    digest_input(&mut inputs, "model", &model_paths(&model_path).0)?;
    let vectors = prepare(extract_label_vectors(&model), norm)?;
    let other = match &other_path {
        Some(p) => {
            let (m, _) = load_model(p)?;
            digest_input(&mut inputs, "cosine", &model_paths(p).0)?;
            Some(prepare(extract_label_vectors(&m), norm)?)
        }
        None => None,
    };

    let tree = agglomerate(&vectors, linkage, distance);
    let order = tree.leaf_order();
    let similarity = match &other {
        Some(b) => {
            let cols = if b.len() >= 2 {
                agglomerate(b, linkage, distance).leaf_order()
            } else {
                (0..b.len()).collect()
            };
            cosine_matrix(&vectors, b)?.reordered(&order, &cols)
        }
        None => cosine_matrix(&vectors, &vectors)?.reordered(&order, &order),
    };
    let style = DendrogramStyle {
        cut_height: clusters.and_then(|k| cut_height(&tree, k)),
        ..DendrogramStyle::default()
    };
    let dendrogram_svg = render_dendrogram(&tree, &style)?;
    let heatmap_svg = render_heatmap(&similarity)?;

    let tsne_csv = if perplexity.is_some() || vectors.len() >= 4 {
        let cfg = TsneConfig {
            perplexity,
            iterations,
            seed: rc.seed,
            ..defaults
        };
        let out = tsne(&vectors, &cfg)?;
        let mut csv = String::from("label,x,y\n");
        for (name, row) in vectors.names().iter().zip(out.coords.rows()) {
            let _ = writeln!(csv, "{},{:.6},{:.6}", csv_field(name), row[0], row[1]);
        }
        Some(csv)
    } else {
        log::warn!("t-SNE skipped: {} labels are too few", vectors.len());
        None
    };

    rc.create_out()?;
    write_text(&rc.out, "dendrogram.svg", &dendrogram_svg)?;
    let mut json = serde_json::to_string_pretty(&tree.to_json()).map_err(Error::from)?;
    json.push('\n');
    write_text(&rc.out, "dendrogram.json", &json)?;
    write_text(&rc.out, "similarity.csv", &similarity.to_csv())?;
    write_text(&rc.out, "heatmap.svg", &heatmap_svg)?;
    if let Some(csv) = &tsne_csv {
        write_text(&rc.out, "tsne.csv", csv)?;
    }
    rc.write_provenance(&inputs, None::<()>)?;
    println!(
        "{} labels clustered{}",
        vectors.len(),
        if tsne_csv.is_some() { ", t-SNE written" } else { "" }
    );
    Ok(())
}
