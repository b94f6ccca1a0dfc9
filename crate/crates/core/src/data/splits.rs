use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitMode {
    /// Test speakers also appear in training (different instances).
    SeenHeard,
    /// Test speakers never appear in training.
    UnseenUnheard,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::SeenHeard => "seen-heard",
            SplitMode::UnseenUnheard => "unseen-unheard",
        })
    }
}

impl FromStr for SplitMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "seen-heard" => Ok(SplitMode::SeenHeard),
            "unseen-unheard" => Ok(SplitMode::UnseenUnheard),
            _ => Err(invalid(format!("unknown split mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            valid: 0.1,
            test: 0.3,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let all = [self.train, self.valid, self.test];
        if all.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(invalid(format!(
                "split ratios {all:?} must be finite and >= 0"
            )));
        }
        if self.train <= 0.0 || self.test <= 0.0 {
            return Err(invalid("train and test ratios must be positive"));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("split ratios {all:?} must sum to 1")));
        }
        Ok(())
    }
}

/// Disjoint instance-id lists, each in dataset order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl SplitPlan {
    /// Checks disjointness and the speaker relation required by `mode`.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.valid).chain(&self.test) {
            dataset.require(id)?;
            if !seen.insert(id.as_str()) {
                return Err(invalid(format!("instance {id} appears in two splits")));
            }
        }
        let speakers = |ids: &[String]| -> HashSet<String> {
            ids.iter()
                .map(|id| dataset.get(id).unwrap().speaker_id.clone())
                .collect()
        };
        let train = speakers(&self.train);
        let test = speakers(&self.test);
        match self.mode {
            SplitMode::SeenHeard => {
                if let Some(s) = test.difference(&train).next() {
                    return Err(invalid(format!("test speaker {s} missing from train")));
                }
            }
            SplitMode::UnseenUnheard => {
                if let Some(s) = test.intersection(&train).next() {
                    return Err(invalid(format!("speaker {s} in both train and test")));
                }
            }
        }
        Ok(())
    }
}

pub fn make_splits(
    dataset: &Dataset,
    mode: SplitMode,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitPlan> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_speaker: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in dataset.records().iter().enumerate() {
        by_speaker.entry(r.speaker_id.as_str()).or_default().push(i);
    }
    let speakers = dataset.speakers();

    // 0 = train, 1 = valid, 2 = test
    let mut assignment = vec![0u8; dataset.len()];
    match mode {
        SplitMode::SeenHeard => {
            for s in &speakers {
                let mut idx = by_speaker[s].clone();
                idx.shuffle(&mut rng);
                let n = idx.len() as f64;
                let n_test = (n * ratios.test).floor() as usize;
                let n_valid = (n * ratios.valid).floor() as usize;
                for &i in &idx[..n_test] {
                    assignment[i] = 2;
                }
                for &i in &idx[n_test..n_test + n_valid] {
                    assignment[i] = 1;
                }
            }
        }
        SplitMode::UnseenUnheard => {
            if speakers.len() < 3 {
                return Err(invalid(format!(
                    "unseen-unheard splits need at least 3 speakers, got {}",
                    speakers.len()
                )));
            }
            let mut order = speakers.clone();
            order.shuffle(&mut rng);
            let n = order.len() as f64;
            let n_test = ((n * ratios.test).round() as usize).max(1);
            let n_valid = if ratios.valid > 0.0 {
                ((n * ratios.valid).round() as usize).max(1)
            } else {
                0
            };
            if n_test + n_valid >= order.len() {
                return Err(invalid(format!(
                    "ratios leave no training speakers out of {}",
                    order.len()
                )));
            }
            for (k, s) in order.iter().enumerate() {
                let part = if k < n_test {
                    2
                } else if k < n_test + n_valid {
                    1
                } else {
                    0
                };
                for &i in &by_speaker[s] {
                    assignment[i] = part;
                }
            }
        }
    }

    let ids = |part: u8| -> Vec<String> {
        dataset
            .records()
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == part)
            .map(|(r, _)| r.instance_id.clone())
            .collect()
    };
    let plan = SplitPlan {
        mode,
        train: ids(0),
        valid: ids(1),
        test: ids(2),
    };
    if plan.test.is_empty() {
        return Err(invalid("ratios produce an empty test split"));
    }
    plan.validate(dataset)?;
    Ok(plan)
}
