//! Command-line harness: synthetic data generation, training, verification
//! and matching evaluation, and the variant ablation grid.

mod commands;
mod config;
mod pipeline;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    ablation_runs_csv, ablation_summary, ablation_summary_csv, cmd_ablate, cmd_eval_match,
    cmd_eval_verify, cmd_gen, cmd_train, history_csv, run_ablation, AblationCell, AblationResult,
    GenSummary, TrainSummary, CHECKPOINT_FILE, HISTORY_FILE, MATCH_TRIALS_FILE, RUN_CONFIG_FILE,
    SPLIT_FILE, VERIFY_TRIALS_FILE,
};
pub use config::{default_out_root, RunConfig, OUT_ENV};
pub use pipeline::{
    derive_seed, evaluate_matching, evaluate_verification, new_report, run_cell, run_matching,
    score_verification, MatchOutcomes, Prepared,
};

use crate::data::{PositivePairing, SplitMode, SyntheticSpec};
use crate::error::Result;
use crate::model::{Modality, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "facevoice",
    version,
    about = "Face-voice association experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Gen(GenArgs),
    /// Train a model and write its checkpoint, history and test trial lists.
    Train(RunArgs),
    /// Cross-modal verification: EER and AUC.
    EvalVerify(EvalArgs),
    /// Cross-modal matching accuracy per gallery size.
    EvalMatch(EvalArgs),
    /// Train and evaluate every (variant, seed) cell on shared splits and trials.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 32)]
    pub speakers: usize,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 16)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub face_dim: usize,
    #[arg(long, default_value_t = 48)]
    pub voice_dim: usize,
    /// Per-modality noise standard deviation.
    #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory [default: <output root>/dataset].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Run settings; each flag overrides the config file, which overrides defaults.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// JSON run configuration (may be partial).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Model init, shuffling and dropout seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Split and trial seed.
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// CE, MSM, FOP or OURS.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Feed matrix variants from heads of width n_speakers - 1, without the
    /// trainable projection.
    #[arg(long)]
    pub no_projection: bool,
    /// seen-heard or unseen-unheard.
    #[arg(long)]
    pub split_mode: Option<SplitMode>,
    /// Comma-separated, e.g. 2,4,6,8,10.
    #[arg(long, value_delimiter = ',')]
    pub gallery_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub verify_trials: Option<usize>,
    #[arg(long)]
    pub match_trials: Option<usize>,
    /// Probe modality for matching: face or voice.
    #[arg(long)]
    pub probe: Option<Modality>,
    /// Positive verification pairs from the same instance only.
    #[arg(long)]
    pub same_instance_positives: bool,
    /// Keep only records with this tag.
    #[arg(long)]
    pub tag: Option<String>,
    /// Output directory [default: config file, else $FACEVOICE_OUT, else ./runs].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// [default: <out>/model.ckpt]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Trial list [default: the one `train` wrote into <out>].
    #[arg(long)]
    pub trials: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "CE,MSM,FOP,OURS")]
    pub variants: Vec<Variant>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $field:ident) => {
                if let Some(v) = self.$flag.clone() {
                    c.$field = v;
                }
            };
        }
        set!(seed => seed);
        set!(data_seed => data_seed);
        set!(epochs => epochs);
        set!(batch_size => batch_size);
        set!(lr => base_lr);
        set!(decay => decay_rate);
        set!(variant => variant);
        set!(dropout => dropout_rate);
        set!(split_mode => split_mode);
        set!(gallery_sizes => gallery_sizes);
        set!(verify_trials => n_verify_trials);
        set!(match_trials => n_match_trials);
        set!(probe => probe_modality);
        set!(out => out);
        if self.alpha.is_some() {
            c.alpha = self.alpha;
        }
        if self.embed_dim.is_some() {
            c.embed_dim = self.embed_dim;
        }
        if self.dataset.is_some() {
            c.dataset = self.dataset.clone();
        }
        if self.tag.is_some() {
            c.tag = self.tag.clone();
        }
        if self.no_projection {
            c.projection = false;
        }
        if self.same_instance_positives {
            c.positive_pairing = PositivePairing::SameInstance;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Executes one parsed command, writing a short summary to `out`.
pub fn run<W: Write>(cli: &Cli, out: &mut W) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => {
            let spec = SyntheticSpec {
                n_speakers: a.speakers,
                instances_per_speaker: a.instances,
                latent_dim: a.latent_dim,
                face_dim: a.face_dim,
                voice_dim: a.voice_dim,
                modality_noise_sigma: a.sigma,
                seed: a.seed,
            };
            let dir = a
                .out
                .clone()
                .unwrap_or_else(|| default_out_root().join("dataset"));
            let s = cmd_gen(&spec, &dir)?;
            writeln!(out, "dataset: {}", s.dir.display())?;
            writeln!(out, "manifest digest: {}", s.manifest_digest)?;
            writeln!(out, "dataset digest: {}", s.dataset_digest)?;
        }
        Command::Train(a) => {
            let config = a.resolve()?;
            let s = cmd_train(&config)?;
            writeln!(out, "{}", serde_json::to_string(&config)?)?;
            writeln!(out, "checkpoint: {}", s.dir.join(CHECKPOINT_FILE).display())?;
            if let Some(e) = s.best_epoch {
                writeln!(out, "selected epoch: {e}")?;
            }
            if let Some(l) = s.final_loss {
                writeln!(out, "final train loss: {l}")?;
            }
        }
        Command::EvalVerify(a) => {
            let config = a.run.resolve()?;
            let r = cmd_eval_verify(&config, a.checkpoint.as_deref(), a.trials.as_deref())?;
            writeln!(out, "{}", serde_json::to_string(&config)?)?;
            writeln!(
                out,
                "EER {} AUC {} over {} trials",
                r.eer.unwrap_or(f64::NAN),
                r.auc.unwrap_or(f64::NAN),
                r.n_verification_trials
            )?;
        }
        Command::EvalMatch(a) => {
            let config = a.run.resolve()?;
            let r = cmd_eval_match(&config, a.checkpoint.as_deref(), a.trials.as_deref())?;
            writeln!(out, "{}", serde_json::to_string(&config)?)?;
            write!(out, "{}", r.matching_curve_csv())?;
        }
        Command::Ablate(a) => {
            let config = a.run.resolve()?;
            let r = cmd_ablate(&config, &a.variants, &a.seeds)?;
            writeln!(out, "{}", serde_json::to_string(&config)?)?;
            write!(out, "{}", ablation_summary_csv(&r))?;
        }
    }
    Ok(())
}
