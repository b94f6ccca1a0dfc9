use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::digest_hex;
use crate::error::{invalid, Error, Result};
use crate::model::Modality;

/// Which instances a positive verification pair may combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PositivePairing {
    /// Face and voice from any instances of the same speaker.
    #[default]
    AnyInstance,
    /// Face and voice from the same instance.
    SameInstance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationTrial {
    pub face_id: String,
    pub voice_id: String,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerificationTrialList {
    pub pairs: Vec<VerificationTrial>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingTrial {
    pub probe: String,
    pub modality: Modality,
    pub gallery: Vec<String>,
    pub answer: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchingTrialList {
    pub trials: Vec<MatchingTrial>,
}

/// Split instances grouped by speaker, in first-appearance order.
fn group_by_speaker<'a>(dataset: &'a Dataset, ids: &'a [String]) -> Result<Vec<Vec<&'a str>>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(invalid(format!("instance {id} listed twice")));
        }
        let r = dataset.require(id)?;
        let k = match order.iter().position(|s| *s == r.speaker_id) {
            Some(k) => k,
            None => {
                order.push(r.speaker_id.as_str());
                order.len() - 1
            }
        };
        groups.entry(k).or_default().push(id.as_str());
    }
    Ok(groups.into_values().collect())
}

/// Number of distinct positive pairs `split_ids` can supply under `pairing`.
pub fn positive_pair_count(
    dataset: &Dataset,
    split_ids: &[String],
    pairing: PositivePairing,
) -> Result<usize> {
    let groups = group_by_speaker(dataset, split_ids)?;
    Ok(groups
        .iter()
        .map(|g| match pairing {
            PositivePairing::SameInstance => g.len(),
            PositivePairing::AnyInstance => g.len() * g.len(),
        })
        .sum())
}

/// Balanced verification trials: `n_trials / 2` (rounded down) distinct
/// positive pairs and the rest distinct negative pairs, shuffled.
pub fn make_verification_trials(
    dataset: &Dataset,
    split_ids: &[String],
    n_trials: usize,
    pairing: PositivePairing,
    seed: u64,
) -> Result<VerificationTrialList> {
    let groups = group_by_speaker(dataset, split_ids)?;
    if groups.len() < 2 {
        return Err(invalid(format!(
            "verification trials need at least 2 speakers, split has {}",
            groups.len()
        )));
    }
    let n_pos = n_trials / 2;
    let n_neg = n_trials - n_pos;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut positives: Vec<(&str, &str)> = Vec::new();
    for g in &groups {
        match pairing {
            PositivePairing::SameInstance => positives.extend(g.iter().map(|&i| (i, i))),
            PositivePairing::AnyInstance => {
                for &f in g {
                    positives.extend(g.iter().map(|&v| (f, v)));
                }
            }
        }
    }
    if positives.len() < n_pos {
        return Err(invalid(format!(
            "requested {n_pos} positive pairs but only {} exist",
            positives.len()
        )));
    }
    positives.shuffle(&mut rng);
    positives.truncate(n_pos);

    // Flattened instance list with each instance's group.
    let flat: Vec<(usize, &str)> = groups
        .iter()
        .enumerate()
        .flat_map(|(k, g)| g.iter().map(move |&id| (k, id)))
        .collect();
    let total = flat.len();
    let same: usize = groups.iter().map(|g| g.len() * g.len()).sum();
    let available = total * total - same;
    if available < n_neg {
        return Err(invalid(format!(
            "requested {n_neg} negative pairs but only {available} exist"
        )));
    }
    let negatives: Vec<(usize, usize)> = if n_neg * 2 <= available {
        let mut chosen = HashSet::with_capacity(n_neg);
        let mut out = Vec::with_capacity(n_neg);
        while out.len() < n_neg {
            let a = rng.random_range(0..total);
            let b = rng.random_range(0..total);
            if flat[a].0 != flat[b].0 && chosen.insert((a, b)) {
                out.push((a, b));
            }
        }
        out
    } else {
        let mut all: Vec<(usize, usize)> = (0..total)
            .flat_map(|a| (0..total).map(move |b| (a, b)))
            .filter(|&(a, b)| flat[a].0 != flat[b].0)
            .collect();
        all.shuffle(&mut rng);
        all.truncate(n_neg);
        all
    };

    let mut pairs: Vec<VerificationTrial> = positives
        .into_iter()
        .map(|(f, v)| VerificationTrial {
            face_id: f.to_string(),
            voice_id: v.to_string(),
            label: true,
        })
        .chain(negatives.into_iter().map(|(a, b)| VerificationTrial {
            face_id: flat[a].1.to_string(),
            voice_id: flat[b].1.to_string(),
            label: false,
        }))
        .collect();
    pairs.shuffle(&mut rng);
    Ok(VerificationTrialList { pairs })
}

/// Matching trials with galleries of `n_c` items from distinct speakers,
/// exactly one of which shares the probe's speaker. The matching item comes
/// from a different instance of that speaker whenever one exists.
pub fn make_matching_trials(
    dataset: &Dataset,
    split_ids: &[String],
    n_c: usize,
    n_trials: usize,
    probe_modality: Modality,
    seed: u64,
) -> Result<MatchingTrialList> {
    if n_c < 2 {
        return Err(invalid(format!(
            "gallery size must be at least 2, got {n_c}"
        )));
    }
    let groups = group_by_speaker(dataset, split_ids)?;
    if groups.len() < n_c {
        return Err(invalid(format!(
            "gallery size {n_c} exceeds the {} speakers in the split",
            groups.len()
        )));
    }
    let flat: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(k, g)| (0..g.len()).map(move |j| (k, j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let (s, j) = flat[rng.random_range(0..flat.len())];
        let group = &groups[s];
        let matching = if group.len() > 1 {
            let mut m = rng.random_range(0..group.len() - 1);
            if m >= j {
                m += 1;
            }
            m
        } else {
            j
        };
        let mut gallery: Vec<String> = index::sample(&mut rng, groups.len() - 1, n_c - 1)
            .into_iter()
            .map(|k| {
                let k = if k >= s { k + 1 } else { k };
                let g = &groups[k];
                g[rng.random_range(0..g.len())].to_string()
            })
            .collect();
        let answer = rng.random_range(0..n_c);
        gallery.insert(answer, group[matching].to_string());
        trials.push(MatchingTrial {
            probe: group[j].to_string(),
            modality: probe_modality,
            gallery,
            answer,
        });
    }
    Ok(MatchingTrialList { trials })
}

impl VerificationTrialList {
    pub fn n_positive(&self) -> usize {
        self.pairs.iter().filter(|p| p.label).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("face_id,voice_id,label\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{},{},{}\n",
                p.face_id,
                p.voice_id,
                u8::from(p.label)
            ));
        }
        out
    }

    pub fn digest(&self) -> String {
        digest_hex(self.to_csv().as_bytes())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            face_id: String,
            voice_id: String,
            label: u8,
        }
        let mut reader = csv::Reader::from_path(path)?;
        let mut pairs = Vec::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row =
                row.map_err(|e| Error::Format(format!("{}: row {}: {e}", path.display(), i + 1)))?;
            let label = match row.label {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::Format(format!(
                        "{}: row {}: label {other} is not 0 or 1",
                        path.display(),
                        i + 1
                    )))
                }
            };
            pairs.push(VerificationTrial {
                face_id: row.face_id,
                voice_id: row.voice_id,
                label,
            });
        }
        Ok(Self { pairs })
    }
}

impl MatchingTrialList {
    /// Checks answer indices and, against `dataset`, the single-match rule.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        for (i, t) in self.trials.iter().enumerate() {
            if t.gallery.len() < 2 || t.answer >= t.gallery.len() {
                return Err(invalid(format!(
                    "matching trial {i}: answer {} with gallery of {}",
                    t.answer,
                    t.gallery.len()
                )));
            }
            let probe_speaker = &dataset.require(&t.probe)?.speaker_id;
            let mut speakers = HashSet::new();
            for (k, g) in t.gallery.iter().enumerate() {
                let s = &dataset.require(g)?.speaker_id;
                if !speakers.insert(s) {
                    return Err(invalid(format!(
                        "matching trial {i}: speaker {s} twice in gallery"
                    )));
                }
                if (s == probe_speaker) != (k == t.answer) {
                    return Err(invalid(format!(
                        "matching trial {i}: gallery item {k} contradicts answer {}",
                        t.answer
                    )));
                }
            }
        }
        Ok(())
    }

    /// Trials grouped by gallery size, ascending.
    pub fn by_gallery_size(&self) -> BTreeMap<usize, Vec<&MatchingTrial>> {
        let mut out: BTreeMap<usize, Vec<&MatchingTrial>> = BTreeMap::new();
        for t in &self.trials {
            out.entry(t.gallery.len()).or_default().push(t);
        }
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for t in &self.trials {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn digest(&self) -> Result<String> {
        Ok(digest_hex(self.to_jsonl()?.as_bytes()))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl()?.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut trials = Vec::new();
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: MatchingTrial = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}: line {}: {e}", path.display(), i + 1)))?;
            trials.push(t);
        }
        Ok(Self { trials })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tiny_dataset;

    fn all_ids(d: &Dataset) -> Vec<String> {
        d.records().iter().map(|r| r.instance_id.clone()).collect()
    }

    #[test]
    fn verification_balance_and_labels() {
        let d = tiny_dataset(6, 5);
        let ids = all_ids(&d);
        for n in [10, 11, 100] {
            let t = make_verification_trials(&d, &ids, n, PositivePairing::AnyInstance, 3).unwrap();
            assert_eq!(t.pairs.len(), n);
            assert_eq!(t.n_positive(), n / 2);
            for p in &t.pairs {
                let same =
                    d.get(&p.face_id).unwrap().speaker_id == d.get(&p.voice_id).unwrap().speaker_id;
                assert_eq!(same, p.label);
            }
            let distinct: HashSet<_> = t.pairs.iter().map(|p| (&p.face_id, &p.voice_id)).collect();
            assert_eq!(distinct.len(), n);
        }
    }

    #[test]
    fn verification_same_instance_and_determinism() {
        let d = tiny_dataset(4, 3);
        let ids = all_ids(&d);
        let t = make_verification_trials(&d, &ids, 20, PositivePairing::SameInstance, 1).unwrap();
        assert!(t
            .pairs
            .iter()
            .filter(|p| p.label)
            .all(|p| p.face_id == p.voice_id));
        let again =
            make_verification_trials(&d, &ids, 20, PositivePairing::SameInstance, 1).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn verification_errors() {
        let d = tiny_dataset(4, 2);
        let ids = all_ids(&d);
        // 4 speakers x 2^2 = 16 positive pairs available.
        assert!(make_verification_trials(&d, &ids, 34, PositivePairing::AnyInstance, 0).is_err());
        assert!(make_verification_trials(&d, &ids, 32, PositivePairing::AnyInstance, 0).is_ok());
        let one_speaker: Vec<String> = vec!["i0".into(), "i4".into()];
        assert!(
            make_verification_trials(&d, &one_speaker, 2, PositivePairing::AnyInstance, 0).is_err()
        );
    }

    #[test]
    fn matching_single_match_and_errors() {
        let d = tiny_dataset(8, 3);
        let ids = all_ids(&d);
        let list = make_matching_trials(&d, &ids, 5, 300, Modality::Voice, 4).unwrap();
        list.validate(&d).unwrap();
        for t in &list.trials {
            assert_eq!(t.gallery.len(), 5);
            assert_ne!(t.gallery[t.answer], t.probe);
        }
        assert!(make_matching_trials(&d, &ids, 9, 10, Modality::Face, 0).is_err());
        assert!(make_matching_trials(&d, &ids, 1, 10, Modality::Face, 0).is_err());
    }

    #[test]
    fn matching_answer_positions_uniform() {
        let d = tiny_dataset(8, 3);
        let ids = all_ids(&d);
        let list = make_matching_trials(&d, &ids, 5, 10_000, Modality::Face, 12).unwrap();
        let mut counts = [0usize; 5];
        for t in &list.trials {
            counts[t.answer] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.2).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let d = tiny_dataset(5, 3);
        let ids = all_ids(&d);
        let v = make_verification_trials(&d, &ids, 12, PositivePairing::AnyInstance, 0).unwrap();
        let vp = dir.path().join("v.csv");
        v.write_csv(&vp).unwrap();
        assert_eq!(VerificationTrialList::read_csv(&vp).unwrap(), v);

        let m = make_matching_trials(&d, &ids, 3, 7, Modality::Voice, 0).unwrap();
        let mp = dir.path().join("m.jsonl");
        m.write_jsonl(&mp).unwrap();
        assert_eq!(MatchingTrialList::read_jsonl(&mp).unwrap(), m);
        let first = std::fs::read_to_string(&mp).unwrap();
        let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        assert_eq!(line["modality"], "voice");
        assert!(line["gallery"].is_array() && line["answer"].is_u64() && line["probe"].is_string());

        std::fs::write(&vp, "face_id,voice_id,label\na,b,2\n").unwrap();
        assert!(VerificationTrialList::read_csv(&vp).is_err());
    }
}
