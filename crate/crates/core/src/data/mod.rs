//! Datasets of precomputed face/voice feature vectors, synthetic stand-ins,
//! seen-heard / unseen-unheard splits and trial lists.

mod io;
mod splits;
mod synthetic;
mod trials;

use std::collections::HashMap;

pub use io::{
    dataset_digest, load_dataset, manifest_digest, write_dataset, Manifest, ManifestRecord,
};
pub use splits::{make_splits, SplitMode, SplitPlan, SplitRatios};
pub use synthetic::{gen_synthetic, SyntheticSpec};
pub use trials::{
    make_matching_trials, make_verification_trials, positive_pair_count, MatchingTrial,
    MatchingTrialList, PositivePairing, VerificationTrial, VerificationTrialList,
};

use crate::error::{invalid, Error, Result};
use crate::model::{Modality, TrainingInstance, ValidationPair};

/// One instance: a face vector and a voice vector from the same clip.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub instance_id: String,
    pub speaker_id: String,
    pub face: Vec<f32>,
    pub voice: Vec<f32>,
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    face_dim: usize,
    voice_dim: usize,
    records: Vec<EmbeddingRecord>,
    index: HashMap<String, usize>,
}

impl Dataset {
    /// Validates dimensions, id uniqueness and non-emptiness.
    pub fn new(face_dim: usize, voice_dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        if face_dim == 0 || voice_dim == 0 {
            return Err(invalid("dataset dimensions must be positive"));
        }
        if records.is_empty() {
            return Err(Error::Format("dataset has no records".into()));
        }
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.face.len() != face_dim || r.voice.len() != voice_dim {
                return Err(Error::Format(format!(
                    "record {i} ({}): face/voice lengths {}/{} do not match declared {face_dim}/{voice_dim}",
                    r.instance_id,
                    r.face.len(),
                    r.voice.len()
                )));
            }
            if index.insert(r.instance_id.clone(), i).is_some() {
                return Err(Error::Format(format!(
                    "record {i}: duplicate instance id {}",
                    r.instance_id
                )));
            }
        }
        Ok(Self {
            face_dim,
            voice_dim,
            records,
            index,
        })
    }

    pub fn face_dim(&self) -> usize {
        self.face_dim
    }

    pub fn voice_dim(&self) -> usize {
        self.voice_dim
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, instance_id: &str) -> Option<&EmbeddingRecord> {
        self.index.get(instance_id).map(|&i| &self.records[i])
    }

    pub fn position(&self, instance_id: &str) -> Option<usize> {
        self.index.get(instance_id).copied()
    }

    pub(crate) fn require(&self, instance_id: &str) -> Result<&EmbeddingRecord> {
        self.get(instance_id)
            .ok_or_else(|| invalid(format!("unknown instance id {instance_id}")))
    }

    /// Speaker ids in order of first appearance.
    pub fn speakers(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.speaker_id.as_str()))
            .map(|r| r.speaker_id.as_str())
            .collect()
    }

    /// Records carrying `tag`.
    pub fn filter_by_tag(&self, tag: &str) -> Result<Dataset> {
        let records = self
            .records
            .iter()
            .filter(|r| r.tag.as_deref() == Some(tag))
            .cloned()
            .collect();
        Dataset::new(self.face_dim, self.voice_dim, records)
    }

    pub fn raw(&self, instance_id: &str, modality: Modality) -> Result<Vec<f64>> {
        let r = self.require(instance_id)?;
        let v = match modality {
            Modality::Face => &r.face,
            Modality::Voice => &r.voice,
        };
        Ok(v.iter().map(|&x| x as f64).collect())
    }

    /// Training instances for `ids` with speakers re-indexed `0..k` in order
    /// of first appearance. Returns the speaker names alongside.
    pub fn training_instances(
        &self,
        ids: &[String],
    ) -> Result<(Vec<TrainingInstance>, Vec<String>)> {
        let mut speaker_index: HashMap<&str, usize> = HashMap::new();
        let mut names = Vec::new();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let r = self.require(id)?;
            let next = speaker_index.len();
            let s = *speaker_index
                .entry(r.speaker_id.as_str())
                .or_insert_with(|| {
                    names.push(r.speaker_id.clone());
                    next
                });
            out.push(TrainingInstance {
                face: r.face.iter().map(|&x| x as f64).collect(),
                voice: r.voice.iter().map(|&x| x as f64).collect(),
                speaker: s,
            });
        }
        Ok((out, names))
    }

    /// Resolves verification trials to raw vector pairs.
    pub fn validation_pairs(&self, trials: &VerificationTrialList) -> Result<Vec<ValidationPair>> {
        trials
            .pairs
            .iter()
            .map(|t| {
                Ok(ValidationPair {
                    face: self.raw(&t.face_id, Modality::Face)?,
                    voice: self.raw(&t.voice_id, Modality::Voice)?,
                    label: t.label,
                })
            })
            .collect()
    }
}

#[cfg(test)]
pub(crate) fn tiny_dataset(speakers: usize, per: usize) -> Dataset {
    let records = (0..speakers * per)
        .map(|i| EmbeddingRecord {
            instance_id: format!("i{i}"),
            speaker_id: format!("s{}", i % speakers),
            face: vec![i as f32, 1.0],
            voice: vec![1.0, i as f32, 2.0],
            tag: Some(if i % 2 == 0 { "en" } else { "ur" }.to_string()),
        })
        .collect();
    Dataset::new(2, 3, records).unwrap()
}
