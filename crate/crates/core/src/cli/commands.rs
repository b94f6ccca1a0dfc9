use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::pipeline::{
    evaluate_matching, evaluate_verification, new_report, run_cell, trials_digest, Prepared,
};
use super::RunConfig;
use crate::data::{
    dataset_digest, gen_synthetic, load_dataset, manifest_digest, write_dataset, MatchingTrialList,
    SyntheticSpec, VerificationTrialList,
};
use crate::error::{invalid, Result};
use crate::metrics::MetricsReport;
use crate::model::{load_checkpoint, save_checkpoint, EpochRecord, Variant};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const SPLIT_FILE: &str = "split.json";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const VERIFY_TRIALS_FILE: &str = "verify_trials.csv";
pub const MATCH_TRIALS_FILE: &str = "match_trials.jsonl";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenSummary {
    pub dir: PathBuf,
    pub manifest_digest: String,
    pub dataset_digest: String,
}

pub fn cmd_gen(spec: &SyntheticSpec, dir: &Path) -> Result<GenSummary> {
    let dataset = gen_synthetic(spec)?;
    write_dataset(&dataset, dir)?;
    Ok(GenSummary {
        dir: dir.to_path_buf(),
        manifest_digest: manifest_digest(&dataset)?,
        dataset_digest: dataset_digest(&dataset)?,
    })
}

fn load_configured_dataset(config: &RunConfig) -> Result<crate::data::Dataset> {
    let path = config
        .dataset
        .as_ref()
        .ok_or_else(|| invalid("no dataset given (use --dataset or the config file)"))?;
    load_dataset(path)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,valid_eer,lr\n");
    for h in history {
        let v = h.valid_eer.map(|x| x.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", h.epoch, h.train_loss, v, h.lr).unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub best_epoch: Option<usize>,
    pub final_loss: Option<f64>,
}

/// Trains on the configured split and writes the checkpoint, history, split
/// and test trial lists into `config.out`. Nothing is written on failure.
pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary> {
    config.validate()?;
    let prepared = Prepared::build(config, load_configured_dataset(config)?)?;
    let (model_config, outcome) = prepared.train(config)?;

    let dir = &config.out;
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join(RUN_CONFIG_FILE),
        serde_json::to_string_pretty(config)?,
    )?;
    std::fs::write(
        dir.join(SPLIT_FILE),
        serde_json::to_string_pretty(&prepared.plan)?,
    )?;
    std::fs::write(dir.join(HISTORY_FILE), history_csv(&outcome.history))?;
    prepared
        .verify_trials
        .write_csv(&dir.join(VERIFY_TRIALS_FILE))?;
    prepared
        .match_trials
        .write_jsonl(&dir.join(MATCH_TRIALS_FILE))?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &model_config, &outcome.params)?;
    Ok(TrainSummary {
        dir: dir.clone(),
        best_epoch: outcome.best_epoch,
        final_loss: outcome.history.last().map(|h| h.train_loss),
    })
}

fn eval_inputs(
    config: &RunConfig,
    checkpoint: Option<&Path>,
) -> Result<(
    crate::data::Dataset,
    String,
    crate::model::ModelParams,
    PathBuf,
)> {
    let ckpt = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.out.join(CHECKPOINT_FILE));
    let (_, params) = load_checkpoint(&ckpt)?;
    let dataset = load_configured_dataset(config)?;
    let dataset = match &config.tag {
        Some(tag) => dataset.filter_by_tag(tag)?,
        None => dataset,
    };
    let digest = dataset_digest(&dataset)?;
    Ok((dataset, digest, params, ckpt))
}

/// Scores a verification trial list; writes `verify.json` and `verify.csv`.
pub fn cmd_eval_verify(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    trials: Option<&Path>,
) -> Result<MetricsReport> {
    config.validate()?;
    let (dataset, digest, params, _) = eval_inputs(config, checkpoint)?;
    let path = trials
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.out.join(VERIFY_TRIALS_FILE));
    let list = VerificationTrialList::read_csv(&path)?;
    let mut report = new_report(config, &digest)?;
    evaluate_verification(&mut report, &params, &dataset, &list)?;
    report.write_all(&config.out, "verify")?;
    Ok(report)
}

/// Runs matching trials; writes `match.json`, `match.csv` and the
/// `n_c,accuracy` curve `match_curve.csv`.
pub fn cmd_eval_match(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    trials: Option<&Path>,
) -> Result<MetricsReport> {
    config.validate()?;
    let (dataset, digest, params, _) = eval_inputs(config, checkpoint)?;
    let path = trials
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.out.join(MATCH_TRIALS_FILE));
    let list = MatchingTrialList::read_jsonl(&path)?;
    list.validate(&dataset)?;
    let mut report = new_report(config, &digest)?;
    evaluate_matching(&mut report, &params, &dataset, &list)?;
    report.trials_digest = Some(list.digest()?);
    std::fs::create_dir_all(&config.out)?;
    std::fs::write(config.out.join("match.json"), report.to_json()?)?;
    std::fs::write(config.out.join("match.csv"), report.to_csv())?;
    std::fs::write(
        config.out.join("match_curve.csv"),
        report.matching_curve_csv(),
    )?;
    Ok(report)
}

/// One (variant, seed) cell of the ablation grid.
#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationResult {
    pub run_config: serde_json::Value,
    pub dataset_digest: String,
    pub trials_digest: String,
    pub cells: Vec<AblationCell>,
}

/// Trains and evaluates every (variant, seed) cell on one shared split and
/// one shared pair of trial lists. Cells run in parallel; results keep grid
/// order (variants outer, seeds inner).
pub fn run_ablation(
    config: &RunConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationResult> {
    config.validate()?;
    if variants.is_empty() || seeds.is_empty() {
        return Err(invalid("ablation needs at least one variant and one seed"));
    }
    let prepared = Prepared::build(config, load_configured_dataset(config)?)?;
    let grid: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(variant, seed)| {
            let cell_config = RunConfig {
                seed,
                ..config.for_variant(variant)
            };
            let (outcome, report) = run_cell(&cell_config, &prepared)
                .map_err(|e| invalid(format!("variant {variant}, seed {seed}: {e}")))?;
            Ok(AblationCell {
                variant,
                seed,
                best_epoch: outcome.best_epoch,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationResult {
        run_config: config.to_value()?,
        dataset_digest: prepared.dataset_digest.clone(),
        trials_digest: trials_digest(&prepared)?,
        cells,
    })
}

fn gallery_sizes(result: &AblationResult) -> Vec<usize> {
    let mut sizes: Vec<usize> = result
        .cells
        .iter()
        .flat_map(|c| c.report.matching_accuracy.keys().copied())
        .collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
}

fn header(sizes: &[usize]) -> String {
    let mut h = String::from("variant,seed,eer,auc");
    for n in sizes {
        write!(h, ",acc_nc{n}").unwrap();
    }
    h.push('\n');
    h
}

fn metric_columns(report: &MetricsReport, sizes: &[usize]) -> Vec<f64> {
    let mut v = vec![
        report.eer.unwrap_or(f64::NAN),
        report.auc.unwrap_or(f64::NAN),
    ];
    v.extend(
        sizes
            .iter()
            .map(|n| report.matching_accuracy.get(n).copied().unwrap_or(f64::NAN)),
    );
    v
}

/// One row per cell.
pub fn ablation_runs_csv(result: &AblationResult) -> String {
    let sizes = gallery_sizes(result);
    let mut out = header(&sizes);
    for c in &result.cells {
        write!(out, "{},{}", c.variant, c.seed).unwrap();
        for x in metric_columns(&c.report, &sizes) {
            write!(out, ",{x}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Per-variant mean and sample standard deviation over seeds.
pub fn ablation_summary(result: &AblationResult) -> Vec<(Variant, Vec<f64>, Vec<f64>)> {
    let sizes = gallery_sizes(result);
    let mut variants: Vec<Variant> = Vec::new();
    for c in &result.cells {
        if !variants.contains(&c.variant) {
            variants.push(c.variant);
        }
    }
    variants
        .into_iter()
        .map(|v| {
            let rows: Vec<Vec<f64>> = result
                .cells
                .iter()
                .filter(|c| c.variant == v)
                .map(|c| metric_columns(&c.report, &sizes))
                .collect();
            let n = rows.len() as f64;
            let k = rows[0].len();
            let mean: Vec<f64> = (0..k)
                .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
                .collect();
            let std: Vec<f64> = (0..k)
                .map(|j| {
                    if rows.len() < 2 {
                        return 0.0;
                    }
                    let ss: f64 = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum();
                    (ss / (n - 1.0)).sqrt()
                })
                .collect();
            (v, mean, std)
        })
        .collect()
}

/// `mean` and `std` rows per variant, in the seed column's place.
pub fn ablation_summary_csv(result: &AblationResult) -> String {
    let mut out = header(&gallery_sizes(result));
    for (v, mean, std) in ablation_summary(result) {
        for (label, row) in [("mean", mean), ("std", std)] {
            write!(out, "{v},{label}").unwrap();
            for x in row {
                write!(out, ",{x}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Runs the grid and writes `ablation_runs.csv`, `ablation_summary.csv` and
/// `ablation.json` into `config.out`.
pub fn cmd_ablate(
    config: &RunConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationResult> {
    let result = run_ablation(config, variants, seeds)?;
    std::fs::create_dir_all(&config.out)?;
    std::fs::write(
        config.out.join("ablation_runs.csv"),
        ablation_runs_csv(&result),
    )?;
    std::fs::write(
        config.out.join("ablation_summary.csv"),
        ablation_summary_csv(&result),
    )?;
    std::fs::write(
        config.out.join("ablation.json"),
        serde_json::to_string_pretty(&result)?,
    )?;
    Ok(result)
}
