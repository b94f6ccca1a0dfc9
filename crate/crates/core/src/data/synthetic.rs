use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingRecord};
use crate::error::{invalid, Result};

/// Parameters of the synthetic stand-in for frozen encoder features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_speakers: usize,
    pub instances_per_speaker: usize,
    pub latent_dim: usize,
    pub face_dim: usize,
    pub voice_dim: usize,
    pub modality_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_speakers: 32,
            instances_per_speaker: 20,
            latent_dim: 16,
            face_dim: 64,
            voice_dim: 48,
            modality_noise_sigma: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0
            || self.instances_per_speaker == 0
            || self.latent_dim == 0
            || self.face_dim == 0
            || self.voice_dim == 0
        {
            return Err(invalid("synthetic spec counts must be positive"));
        }
        if self.face_dim < self.latent_dim || self.voice_dim < self.latent_dim {
            return Err(invalid(format!(
                "face/voice dims ({}, {}) must be at least the latent dim {}",
                self.face_dim, self.voice_dim, self.latent_dim
            )));
        }
        if !(self.modality_noise_sigma >= 0.0 && self.modality_noise_sigma.is_finite()) {
            return Err(invalid(format!(
                "noise sigma {} must be a finite value >= 0",
                self.modality_noise_sigma
            )));
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `rows x cols` matrix (row-major) with orthonormal columns, by Gram-Schmidt
/// on Gaussian columns.
fn orthonormal_lift(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while columns.len() < cols {
        let mut v = normal_vec(rng, rows);
        for c in &columns {
            let proj: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= proj * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            columns.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (j, c) in columns.iter().enumerate() {
        for i in 0..rows {
            out[i * cols + j] = c[i];
        }
    }
    out
}

fn lift(matrix: &[f64], latent: &[f64]) -> Vec<f32> {
    matrix
        .chunks_exact(latent.len())
        .map(|row| row.iter().zip(latent).map(|(a, b)| a * b).sum::<f64>() as f32)
        .collect()
}

/// Each speaker gets a unit latent identity; each instance lifts
/// `latent + noise` into face and voice space with independent noise draws
/// and fixed per-modality lifting maps.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let face_lift = orthonormal_lift(&mut rng, spec.face_dim, spec.latent_dim);
    let voice_lift = orthonormal_lift(&mut rng, spec.voice_dim, spec.latent_dim);
    let identities: Vec<Vec<f64>> = (0..spec.n_speakers)
        .map(|_| loop {
            let v = normal_vec(&mut rng, spec.latent_dim);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-9 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect();

    let sigma = spec.modality_noise_sigma;
    let mut records = Vec::with_capacity(spec.n_speakers * spec.instances_per_speaker);
    for (s, identity) in identities.iter().enumerate() {
        for k in 0..spec.instances_per_speaker {
            let noisy = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                identity
                    .iter()
                    .map(|&x| {
                        x + sigma
                            * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                    })
                    .collect()
            };
            let face_latent = noisy(&mut rng);
            let voice_latent = noisy(&mut rng);
            records.push(EmbeddingRecord {
                instance_id: format!("spk{s:04}_{k:04}"),
                speaker_id: format!("spk{s:04}"),
                face: lift(&face_lift, &face_latent),
                voice: lift(&voice_lift, &voice_latent),
                tag: None,
            });
        }
    }
    Dataset::new(spec.face_dim, spec.voice_dim, records)
}
