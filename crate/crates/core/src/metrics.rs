//! Verification metrics (ROC, EER, AUC) and matching accuracy.
//!
//! Decision rule: a trial is accepted when `score >= threshold`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};

/// Scores with same-speaker labels (`true` = positive).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrials {
    scores: Vec<f64>,
    labels: Vec<bool>,
    n_pos: usize,
    n_neg: usize,
}

impl ScoredTrials {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(shape(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.is_empty() {
            return Err(invalid("no trials"));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(invalid(format!("score {i} is not finite")));
        }
        let n_pos = labels.iter().filter(|&&l| l).count();
        Ok(Self {
            n_neg: labels.len() - n_pos,
            n_pos,
            scores,
            labels,
        })
    }

    /// Builds trials from separate positive and negative score lists.
    pub fn from_groups(positives: &[f64], negatives: &[f64]) -> Result<Self> {
        let scores = positives.iter().chain(negatives).copied().collect();
        let labels = std::iter::repeat_n(true, positives.len())
            .chain(std::iter::repeat_n(false, negatives.len()))
            .collect();
        Self::new(scores, labels)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.n_pos
    }

    pub fn n_negative(&self) -> usize {
        self.n_neg
    }

    fn require_both_classes(&self) -> Result<()> {
        if self.n_pos == 0 || self.n_neg == 0 {
            return Err(invalid(format!(
                "need both classes, got {} positive and {} negative trials",
                self.n_pos, self.n_neg
            )));
        }
        Ok(())
    }

    fn sorted(&self) -> Vec<(f64, bool)> {
        let mut v: Vec<(f64, bool)> = self
            .scores
            .iter()
            .copied()
            .zip(self.labels.iter().copied())
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    /// Fraction of negatives with `score >= threshold`.
    pub fpr: f64,
    /// Fraction of positives with `score < threshold`.
    pub fnr: f64,
}

/// One point per distinct score plus sentinels at `-inf` and `+inf`,
/// ascending by threshold.
pub fn roc_curve(trials: &ScoredTrials) -> Result<Vec<RocPoint>> {
    trials.require_both_classes()?;
    let (p, n) = (trials.n_pos as f64, trials.n_neg as f64);
    let sorted = trials.sorted();

    let mut points = Vec::with_capacity(sorted.len() + 2);
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        fnr: 0.0,
    });
    // Counts of items strictly below the current threshold.
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        points.push(RocPoint {
            threshold: t,
            fpr: (trials.n_neg - neg_below) as f64 / n,
            fnr: pos_below as f64 / p,
        });
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
    points.push(RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        fnr: 1.0,
    });
    Ok(points)
}

/// `(FPR, FNR)` at an arbitrary threshold.
pub fn error_rates_at(trials: &ScoredTrials, threshold: f64) -> Result<(f64, f64)> {
    trials.require_both_classes()?;
    let (mut false_accepts, mut false_rejects) = (0usize, 0usize);
    for (&s, &l) in trials.scores.iter().zip(&trials.labels) {
        match (l, s >= threshold) {
            (false, true) => false_accepts += 1,
            (true, false) => false_rejects += 1,
            _ => {}
        }
    }
    Ok((
        false_accepts as f64 / trials.n_neg as f64,
        false_rejects as f64 / trials.n_pos as f64,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

/// Equal error rate by linear interpolation between the two adjacent ROC
/// points where `FPR - FNR` changes sign.
pub fn eer(trials: &ScoredTrials) -> Result<EerResult> {
    let roc = roc_curve(trials)?;
    // FPR - FNR starts at 1 and ends at -1, decreasing monotonically.
    let k = roc
        .iter()
        .position(|pt| pt.fpr - pt.fnr <= 0.0)
        .expect("curve ends with fpr - fnr = -1");
    let (a, b) = (roc[k - 1], roc[k]);
    let da = a.fpr - a.fnr;
    let db = b.fpr - b.fnr;
    let frac = da / (da - db);
    let rate = if frac >= 1.0 {
        b.fpr
    } else {
        a.fpr + frac * (b.fpr - a.fpr)
    };
    let threshold = if frac >= 1.0 {
        b.threshold
    } else if frac <= 0.0 {
        a.threshold
    } else if !a.threshold.is_finite() {
        b.threshold
    } else if !b.threshold.is_finite() {
        a.threshold
    } else {
        a.threshold + frac * (b.threshold - a.threshold)
    };
    Ok(EerResult {
        eer: rate.clamp(0.0, 1.0),
        threshold,
    })
}

/// Area under the ROC curve as the Mann-Whitney statistic (ties count 1/2),
/// computed from average ranks.
pub fn auc(trials: &ScoredTrials) -> Result<f64> {
    trials.require_both_classes()?;
    let sorted = trials.sorted();
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share their mean.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = sorted[i..j].iter().filter(|x| x.1).count();
        pos_rank_sum += avg_rank * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (trials.n_pos as f64, trials.n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of `(predicted, true)` outcomes that agree.
pub fn matching_accuracy(outcomes: &[(usize, usize)]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(invalid("no matching outcomes"));
    }
    let hits = outcomes.iter().filter(|(p, t)| p == t).count();
    Ok(hits as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eer: Option<f64>,
    pub auc: Option<f64>,
    pub eer_threshold: Option<f64>,
    /// Gallery size -> accuracy.
    pub matching_accuracy: BTreeMap<usize, f64>,
    pub n_verification_trials: usize,
    /// Gallery size -> trial count.
    pub n_matching_trials: BTreeMap<usize, usize>,
    pub seed: u64,
    pub config_digest: String,
    #[serde(default)]
    pub dataset_digest: Option<String>,
    #[serde(default)]
    pub trials_digest: Option<String>,
    /// Effective run configuration, verbatim.
    #[serde(default)]
    pub run_config: serde_json::Value,
}

impl MetricsReport {
    pub fn new(seed: u64, config_digest: impl Into<String>) -> Self {
        Self {
            eer: None,
            auc: None,
            eer_threshold: None,
            matching_accuracy: BTreeMap::new(),
            n_verification_trials: 0,
            n_matching_trials: BTreeMap::new(),
            seed,
            config_digest: config_digest.into(),
            dataset_digest: None,
            trials_digest: None,
            run_config: serde_json::Value::Null,
        }
    }

    /// Fills EER, threshold, AUC and the trial count from scored trials.
    pub fn set_verification(&mut self, trials: &ScoredTrials) -> Result<()> {
        let e = eer(trials)?;
        self.auc = Some(auc(trials)?);
        self.eer = Some(e.eer);
        self.eer_threshold = Some(e.threshold);
        self.n_verification_trials = trials.len();
        Ok(())
    }

    pub fn set_matching(&mut self, gallery_size: usize, outcomes: &[(usize, usize)]) -> Result<()> {
        let acc = matching_accuracy(outcomes)?;
        self.matching_accuracy.insert(gallery_size, acc);
        self.n_matching_trials.insert(gallery_size, outcomes.len());
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Header and a single data row; matching columns are `acc_nc<N>`.
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut header = String::from(
            "seed,config_digest,dataset_digest,trials_digest,eer,auc,eer_threshold,n_verification_trials",
        );
        let mut row = format!(
            "{},{},{},{},{},{},{},{}",
            self.seed,
            self.config_digest,
            self.dataset_digest.as_deref().unwrap_or(""),
            self.trials_digest.as_deref().unwrap_or(""),
            opt(self.eer),
            opt(self.auc),
            opt(self.eer_threshold),
            self.n_verification_trials
        );
        for (n_c, acc) in &self.matching_accuracy {
            write!(header, ",acc_nc{n_c}").unwrap();
            write!(row, ",{acc}").unwrap();
        }
        format!("{header}\n{row}\n")
    }

    /// Two-column `n_c,accuracy` curve, ascending by gallery size.
    pub fn matching_curve_csv(&self) -> String {
        let mut out = String::from("n_c,accuracy\n");
        for (n_c, acc) in &self.matching_accuracy {
            writeln!(out, "{n_c},{acc}").unwrap();
        }
        out
    }

    /// Writes `<stem>.json`, `<stem>.csv` and, when matching results exist,
    /// `<stem>_matching.csv` into `dir`.
    pub fn write_all(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json()?)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        if !self.matching_accuracy.is_empty() {
            std::fs::write(
                dir.join(format!("{stem}_matching.csv")),
                self.matching_curve_csv(),
            )?;
        }
        Ok(())
    }
}
