use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::data::{
    dataset_digest, make_matching_trials, make_splits, make_verification_trials,
    positive_pair_count, Dataset, MatchingTrialList, SplitPlan, VerificationTrialList,
};
use crate::error::{invalid, Result};
use crate::metrics::{MetricsReport, ScoredTrials};
use crate::model::{
    match_probe, score_pair, train, ModelConfig, ModelParams, TrainOptions, TrainOutcome,
};

/// Independent sub-seed for one construction step.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Data, split and trial lists shared by every model trained on them.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub dataset_digest: String,
    pub plan: SplitPlan,
    pub valid_trials: Option<VerificationTrialList>,
    pub verify_trials: VerificationTrialList,
    pub match_trials: MatchingTrialList,
}

impl Prepared {
    pub fn build(config: &RunConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        let dataset = match &config.tag {
            Some(tag) => dataset.filter_by_tag(tag)?,
            None => dataset,
        };
        let digest = dataset_digest(&dataset)?;
        let seed = config.data_seed;
        let plan = make_splits(&dataset, config.split_mode, config.split_ratios, seed)?;

        let valid_trials = if plan.valid.is_empty() {
            None
        } else {
            let available = positive_pair_count(&dataset, &plan.valid, config.positive_pairing)?;
            let n = config.n_valid_trials.min(2 * available);
            let speakers = speaker_count(&dataset, &plan.valid);
            if n < 2 || speakers < 2 {
                None
            } else {
                Some(make_verification_trials(
                    &dataset,
                    &plan.valid,
                    n,
                    config.positive_pairing,
                    derive_seed(seed, "valid-trials"),
                )?)
            }
        };
        let verify_trials = make_verification_trials(
            &dataset,
            &plan.test,
            config.n_verify_trials,
            config.positive_pairing,
            derive_seed(seed, "verify-trials"),
        )?;
        let mut match_trials = MatchingTrialList::default();
        for &n_c in &config.gallery_sizes {
            let part = make_matching_trials(
                &dataset,
                &plan.test,
                n_c,
                config.n_match_trials,
                config.probe_modality,
                derive_seed(seed, &format!("match-trials-{n_c}")),
            )?;
            match_trials.trials.extend(part.trials);
        }
        Ok(Self {
            dataset,
            dataset_digest: digest,
            plan,
            valid_trials,
            verify_trials,
            match_trials,
        })
    }

    pub fn train(&self, config: &RunConfig) -> Result<(ModelConfig, TrainOutcome)> {
        let (instances, speakers) = self.dataset.training_instances(&self.plan.train)?;
        let model_config = config.model_config(
            speakers.len(),
            self.dataset.face_dim(),
            self.dataset.voice_dim(),
        )?;
        let valid = match &self.valid_trials {
            Some(t) => self.dataset.validation_pairs(t)?,
            None => Vec::new(),
        };
        let opts = TrainOptions {
            epochs: config.epochs,
            batch_size: config.batch_size,
            adam: config.adam(),
            seed: config.seed,
        };
        let outcome = train(&model_config, &instances, &valid, &opts)?;
        Ok((model_config, outcome))
    }
}

fn speaker_count(dataset: &Dataset, ids: &[String]) -> usize {
    let mut seen = std::collections::HashSet::new();
    ids.iter()
        .filter_map(|id| dataset.get(id))
        .filter(|r| seen.insert(r.speaker_id.as_str()))
        .count()
}

/// Scores every pair; both classes must be present.
pub fn score_verification(
    params: &ModelParams,
    dataset: &Dataset,
    trials: &VerificationTrialList,
) -> Result<ScoredTrials> {
    let pairs = dataset.validation_pairs(trials)?;
    let scores = pairs
        .iter()
        .map(|p| score_pair(params, &p.face, &p.voice))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = pairs.iter().map(|p| p.label).collect();
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(invalid(
            "verification trials hold a single class; EER needs positives and negatives",
        ));
    }
    ScoredTrials::new(scores, labels)
}

/// `(predicted, answer)` per trial.
pub type MatchOutcomes = Vec<(usize, usize)>;

/// Matching outcomes grouped by gallery size.
pub fn run_matching(
    params: &ModelParams,
    dataset: &Dataset,
    trials: &MatchingTrialList,
) -> Result<Vec<(usize, MatchOutcomes)>> {
    let mut out = Vec::new();
    for (n_c, group) in trials.by_gallery_size() {
        let mut outcomes = Vec::with_capacity(group.len());
        for t in group {
            let probe = dataset.raw(&t.probe, t.modality)?;
            let gallery = t
                .gallery
                .iter()
                .map(|g| dataset.raw(g, t.modality.other()))
                .collect::<Result<Vec<_>>>()?;
            outcomes.push((match_probe(params, &probe, t.modality, &gallery)?, t.answer));
        }
        out.push((n_c, outcomes));
    }
    Ok(out)
}

/// A report stamped with the run configuration and digests.
pub fn new_report(config: &RunConfig, dataset_digest: &str) -> Result<MetricsReport> {
    let mut r = MetricsReport::new(config.seed, config.digest()?);
    r.dataset_digest = Some(dataset_digest.to_string());
    r.run_config = config.to_value()?;
    Ok(r)
}

pub fn evaluate_verification(
    report: &mut MetricsReport,
    params: &ModelParams,
    dataset: &Dataset,
    trials: &VerificationTrialList,
) -> Result<()> {
    let scored = score_verification(params, dataset, trials)?;
    report.set_verification(&scored)?;
    report.trials_digest = Some(trials.digest());
    Ok(())
}

pub fn evaluate_matching(
    report: &mut MetricsReport,
    params: &ModelParams,
    dataset: &Dataset,
    trials: &MatchingTrialList,
) -> Result<()> {
    if trials.trials.is_empty() {
        return Err(invalid("no matching trials"));
    }
    for (n_c, outcomes) in run_matching(params, dataset, trials)? {
        report.set_matching(n_c, &outcomes)?;
    }
    Ok(())
}

/// Trains one model on `prepared` and evaluates it on both test trial lists.
pub fn run_cell(config: &RunConfig, prepared: &Prepared) -> Result<(TrainOutcome, MetricsReport)> {
    let (_, outcome) = prepared.train(config)?;
    let mut report = new_report(config, &prepared.dataset_digest)?;
    evaluate_verification(
        &mut report,
        &outcome.params,
        &prepared.dataset,
        &prepared.verify_trials,
    )?;
    evaluate_matching(
        &mut report,
        &outcome.params,
        &prepared.dataset,
        &prepared.match_trials,
    )?;
    report.trials_digest = Some(trials_digest(prepared)?);
    Ok((outcome, report))
}

/// Digest over both test trial lists.
pub fn trials_digest(prepared: &Prepared) -> Result<String> {
    let v = prepared.verify_trials.digest();
    let m = prepared.match_trials.digest()?;
    Ok(crate::digest_hex(format!("{v}{m}").as_bytes()))
}
