use serde::{Deserialize, Serialize};

use super::ParamTensor;
use crate::error::{invalid, shape, Error, Result};

/// Adam hyperparameters plus the exponential learning-rate schedule
/// `lr(epoch) = base_lr * decay_rate^epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub base_lr: f64,
    pub decay_rate: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            base_lr: 1e-4,
            decay_rate: 0.95,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(invalid(format!(
                "learning rate {} must be > 0",
                self.base_lr
            )));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(invalid(format!(
                "decay rate {} outside (0, 1]",
                self.decay_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(invalid("Adam epsilon must be > 0"));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay_rate.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[&ParamTensor]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// One bias-corrected Adam update at the learning rate for `epoch`.
    /// Gradients are zeroed afterwards. Nothing is modified if any gradient
    /// is non-finite.
    pub fn step(&mut self, params: &mut [&mut ParamTensor], epoch: usize) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(shape(format!(
                "optimizer tracks {} tensors, got {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.first_moment) {
            if p.len() != m.len() || p.grad.len() != p.len() {
                return Err(shape(format!(
                    "tensor {} has {} values, optimizer state has {}",
                    p.name(),
                    p.len(),
                    m.len()
                )));
            }
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NumericFailure(format!(
                    "non-finite gradient in {}[{i}]",
                    p.name()
                )));
            }
        }

        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let lr = c.lr_at_epoch(epoch);

        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..p.values.len() {
                let g = p.grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p.values[i] -= lr * m_hat / (v_hat.sqrt() + c.epsilon);
            }
            if let Some(i) = p.values.iter().position(|x| !x.is_finite()) {
                return Err(Error::NumericFailure(format!(
                    "parameter {}[{i}] became non-finite",
                    p.name()
                )));
            }
            p.zero_grad();
        }
        Ok(())
    }
}

pub fn adam_step(
    params: &mut [&mut ParamTensor],
    state: &mut AdamState,
    epoch: usize,
) -> Result<()> {
    state.step(params, epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: f64) -> ParamTensor {
        ParamTensor::new("w", vec![1], vec![w]).unwrap()
    }

    fn config(lr: f64) -> AdamConfig {
        AdamConfig {
            base_lr: lr,
            decay_rate: 1.0,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn single_step_descends() {
        let mut w = scalar(1.0);
        let mut state = AdamState::new(config(0.1), &[&w]).unwrap();
        w.grad[0] = 2.0 * w.values[0];
        adam_step(&mut [&mut w], &mut state, 0).unwrap();
        assert!(w.values[0] < 1.0);
        assert_eq!(w.grad[0], 0.0);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut w = scalar(0.0);
        let mut state = AdamState::new(config(0.1), &[&w]).unwrap();
        for _ in 0..500 {
            w.grad[0] = 2.0 * (w.values[0] - 3.0);
            state.step(&mut [&mut w], 0).unwrap();
        }
        assert!((w.values[0] - 3.0).abs() < 0.01, "{}", w.values[0]);
        assert_eq!(state.step_count(), 500);
    }

    #[test]
    fn decay_schedule() {
        let c = AdamConfig {
            base_lr: 1e-4,
            decay_rate: 0.95,
            ..AdamConfig::default()
        };
        assert_eq!(c.lr_at_epoch(0), 1e-4);
        assert!((c.lr_at_epoch(10) - 5.987369392383787e-5).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = ParamTensor::new("w", vec![2, 2], vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        let before = w.values.clone();
        let mut state = AdamState::new(config(0.5), &[&w]).unwrap();
        state.step(&mut [&mut w], 0).unwrap();
        assert_eq!(w.values, before);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut a = scalar(1.0);
        let mut b = ParamTensor::new("voice.weight", vec![2], vec![0.0, 0.0]).unwrap();
        let mut state = AdamState::new(config(0.1), &[&a, &b]).unwrap();
        a.grad[0] = 1.0;
        b.grad[1] = f64::NAN;
        let err = state.step(&mut [&mut a, &mut b], 0).unwrap_err();
        assert!(err.to_string().contains("voice.weight[1]"), "{err}");
        assert_eq!(a.values[0], 1.0);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn rejects_bad_config() {
        let w = scalar(0.0);
        assert!(AdamState::new(config(0.0), &[&w]).is_err());
        let c = AdamConfig {
            decay_rate: 1.5,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(c, &[&w]).is_err());
    }

    #[test]
    fn shape_mismatch_is_error() {
        let w = scalar(0.0);
        let mut state = AdamState::new(config(0.1), &[&w]).unwrap();
        let mut other = ParamTensor::zeros("x", vec![3]);
        assert!(state.step(&mut [&mut other], 0).is_err());
    }
}
