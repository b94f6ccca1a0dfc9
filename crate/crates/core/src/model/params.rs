use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::diffcore::{sigmoid, ParamTensor};
use crate::error::{shape, Result};

/// Trainable weights. `classifier` exists only for variants without the
/// separation matrix; `projection` only for matrix variants configured with one.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub face_weight: ParamTensor,
    pub face_bias: ParamTensor,
    pub voice_weight: ParamTensor,
    pub voice_bias: ParamTensor,
    pub fusion_logit: ParamTensor,
    pub classifier: Option<ParamTensor>,
    pub projection: Option<ParamTensor>,
}

fn uniform_tensor(name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ParamTensor {
    let bound = 1.0 / (cols as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    ParamTensor::new(name, vec![rows, cols], values).expect("shape matches by construction")
}

/// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases and a
/// zero fusion logit (fusion weight 0.5).
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.embed_dim;
    let face_weight = uniform_tensor("face.weight", d, config.face_in_dim, &mut rng);
    let voice_weight = uniform_tensor("voice.weight", d, config.voice_in_dim, &mut rng);
    let classifier = (!config.variant.uses_matrix())
        .then(|| uniform_tensor("classifier.weight", config.n_speakers, d, &mut rng));
    let projection = config
        .projection
        .then(|| uniform_tensor("projection.weight", config.n_speakers - 1, d, &mut rng));
    Ok(ModelParams {
        face_weight,
        face_bias: ParamTensor::zeros("face.bias", vec![d]),
        voice_weight,
        voice_bias: ParamTensor::zeros("voice.bias", vec![d]),
        fusion_logit: ParamTensor::zeros("fusion.logit", vec![1]),
        classifier,
        projection,
    })
}

impl ModelParams {
    pub fn embed_dim(&self) -> usize {
        self.face_bias.len()
    }

    pub fn face_in_dim(&self) -> usize {
        self.face_weight.shape()[1]
    }

    pub fn voice_in_dim(&self) -> usize {
        self.voice_weight.shape()[1]
    }

    /// Fusion weight `w` applied to the face embedding.
    pub fn fusion_weight(&self) -> f64 {
        sigmoid(self.fusion_logit.values[0])
    }

    pub fn tensors(&self) -> Vec<&ParamTensor> {
        let mut out = vec![
            &self.face_weight,
            &self.face_bias,
            &self.voice_weight,
            &self.voice_bias,
            &self.fusion_logit,
        ];
        out.extend(self.classifier.as_ref());
        out.extend(self.projection.as_ref());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = vec![
            &mut self.face_weight,
            &mut self.face_bias,
            &mut self.voice_weight,
            &mut self.voice_bias,
            &mut self.fusion_logit,
        ];
        out.extend(self.classifier.as_mut());
        out.extend(self.projection.as_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All values concatenated in [`tensors`](Self::tensors) order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.values.iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.grad.iter().copied())
            .collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(shape(format!(
                "flat parameter vector has {} values, model has {}",
                flat.len(),
                self.num_values()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn init_is_deterministic() {
        let c = ModelConfig::for_variant(Variant::Fop, 5, 7, 3);
        let a = init_params(&c, 42).unwrap();
        let b = init_params(&c, 42).unwrap();
        let bits = |p: &ModelParams| {
            p.flat_values()
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&init_params(&c, 43).unwrap()));
    }

    #[test]
    fn init_law() {
        let c = ModelConfig::direct(Variant::Ours, 6, 9, 16);
        let p = init_params(&c, 1).unwrap();
        assert_eq!(p.fusion_weight(), 0.5);
        assert!(p.classifier.is_none() && p.projection.is_none());
        assert!(p.face_weight.values.iter().all(|w| w.abs() <= 1.0 / 3.0));
        assert!(p.voice_weight.values.iter().all(|w| w.abs() <= 0.25));
        assert!(p.face_bias.values.iter().all(|&b| b == 0.0));
        assert_eq!(p.face_weight.shape(), &[5, 9]);

        let c = ModelConfig::for_variant(Variant::Ce, 6, 9, 16);
        let p = init_params(&c, 1).unwrap();
        assert_eq!(p.classifier.as_ref().unwrap().shape(), &[6, 128]);

        let c = ModelConfig::for_variant(Variant::Msm, 6, 9, 16);
        let p = init_params(&c, 1).unwrap();
        assert!(p.classifier.is_none());
        assert_eq!(p.projection.as_ref().unwrap().shape(), &[5, 128]);
    }

    #[test]
    fn flat_round_trip() {
        let c = ModelConfig::for_variant(Variant::Ce, 3, 2, 2);
        let mut p = init_params(&c, 0).unwrap();
        let mut flat = p.flat_values();
        flat[0] = 9.0;
        p.set_flat_values(&flat).unwrap();
        assert_eq!(p.face_weight.values[0], 9.0);
        assert!(p.set_flat_values(&flat[1..]).is_err());
    }
}
