use std::path::PathBuf;

use clap::Args;

use super::probe::{load_dataset, DataArgs};
use super::{usage, write_text, CliResult, RunConfig};
use crate::harness::{run_experiment, ExperimentConfig, Protocol};
use crate::metrics::MetricKind;
use crate::probe::TrainConfig;

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<crate::probe::TaskKind>,
    /// cv (predefined folds) or split (train/val/test).
    #[arg(long)]
    pub protocol: Option<String>,
    /// Number of folds; defaults to the folds present in the manifest.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Reported metrics (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub metric: Vec<MetricKind>,
    /// Validation metric for early stopping and grid selection.
    #[arg(long)]
    pub selection: Option<MetricKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Grid of learning rates (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub learning_rate: Vec<f64>,
    /// Grid of l2 penalties (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub l2: Vec<f64>,
    /// Carve this many validation items from each training portion.
    #[arg(long)]
    pub carve_val: Option<usize>,
    /// Record the clip ids seen by each phase in the report.
    #[arg(long)]
    pub trace: bool,
}

pub fn run_eval(rc: &mut RunConfig, args: EvalArgs) -> CliResult<()> {
    let protocol_name = rc.take("protocol", args.protocol)?;
    let folds = rc.take("folds", args.folds)?;
    let metrics = rc.take_list("metric", args.metric)?;
    let selection = rc.take("selection", args.selection)?;
    let epochs = rc.take_or("epochs", args.epochs, TrainConfig::default().max_epochs)?;
    let rates = rc.take_list("learning-rate", args.learning_rate)?;
    let l2s = rc.take_list("l2", args.l2)?;
    let carve_val = rc.take("carve-val", args.carve_val)?;
    let trace = rc.take_switch("trace", args.trace)?;
    let data = load_dataset(
        rc,
        DataArgs {
            manifest: args.manifest,
            embeddings: args.embeddings,
            task: args.task,
        },
    )?;
    rc.finish()?;

    let m = &data.manifest;
    let fold_ids = m.fold_ids();
    let protocol = match protocol_name.as_deref() {
        Some("cv") => Protocol::Cv {
            folds: folds.unwrap_or(fold_ids.len()),
        },
        Some("split") => Protocol::Split,
        Some(other) => return Err(usage(format!("unknown protocol `{other}`; expected cv or split"))),
        None if !fold_ids.is_empty() => Protocol::Cv {
            folds: folds.unwrap_or(fold_ids.len()),
        },
        None => Protocol::Split,
    };
    if protocol == Protocol::Split && folds.is_some() {
        return Err(usage("--folds only applies to the cv protocol"));
    }

    let base = TrainConfig {
        max_epochs: epochs,
        ..TrainConfig::default()
    };
    let rates = if rates.is_empty() { vec![base.learning_rate] } else { rates };
    let l2s = if l2s.is_empty() { vec![base.l2_lambda] } else { l2s };
    let grid = rates
        .iter()
        .flat_map(|&learning_rate| {
            let base = &base;
            l2s.iter().map(move |&l2_lambda| TrainConfig {
                learning_rate,
                l2_lambda,
                ..base.clone()
            })
        })
        .collect();
    let cfg = ExperimentConfig {
        grid,
        selection,
        metrics: (!metrics.is_empty()).then_some(metrics),
        seed: rc.seed,
        carve_val,
        trace,
        ..ExperimentConfig::new(protocol)
    };

    let result = run_experiment(m, &data.embeddings, &cfg)?;
    let leaks = result.leaks();
    if !leaks.is_empty() {
        return Err(crate::Error::DomainError(format!("held-out items reached training: {leaks:?}")).into());
    }

    rc.create_out()?;
    let mut text = result.to_json()?;
    text.push('\n');
    write_text(&rc.out, "report.json", &text)?;
    write_text(&rc.out, "folds.csv", &result.to_csv())?;
    rc.write_provenance(&data.inputs, Some(&result.provenance))?;
    for (k, v) in &result.aggregate {
        println!("{k} {v:.6} over {} fold(s)", result.folds.len());
    }
    Ok(())
}
