use rand::Rng;

use crate::error::{invalid, shape, Error, Result};

/// Norms at or below this are refused by [`l2_normalize`] and
/// [`cosine_similarity`].
pub const EPS_NORM: f64 = 1e-12;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `W x + b`, with `weight` row-major of shape `bias.len() x input.len()`.
pub fn apply_linear(input: &[f64], weight: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let (rows, cols) = (bias.len(), input.len());
    if weight.len() != rows * cols {
        return Err(shape(format!(
            "linear weight has {} entries, expected {rows}x{cols}",
            weight.len()
        )));
    }
    Ok(weight
        .chunks_exact(cols.max(1))
        .take(rows)
        .zip(bias)
        .map(|(row, b)| dot(row, input) + b)
        .collect())
}

/// Accumulates `g x^T` into `weight_grad` and `g` into `bias_grad`; returns `W^T g`.
pub fn linear_backward(
    input: &[f64],
    weight: &[f64],
    upstream: &[f64],
    weight_grad: &mut [f64],
    bias_grad: &mut [f64],
) -> Result<Vec<f64>> {
    let (rows, cols) = (upstream.len(), input.len());
    if weight.len() != rows * cols || weight_grad.len() != rows * cols || bias_grad.len() != rows {
        return Err(shape(format!(
            "linear backward: upstream {rows}, input {cols}, weight {}, weight grad {}, bias grad {}",
            weight.len(),
            weight_grad.len(),
            bias_grad.len()
        )));
    }
    let mut input_grad = vec![0.0; cols];
    for (r, &g) in upstream.iter().enumerate() {
        bias_grad[r] += g;
        if g == 0.0 {
            continue;
        }
        let w_row = &weight[r * cols..(r + 1) * cols];
        let gw_row = &mut weight_grad[r * cols..(r + 1) * cols];
        for c in 0..cols {
            gw_row[c] += g * input[c];
            input_grad[c] += g * w_row[c];
        }
    }
    Ok(input_grad)
}

pub fn apply_relu(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&x| x.max(0.0)).collect()
}

/// Passes gradient only where the forward input was strictly positive.
pub fn relu_backward(input: &[f64], upstream: &[f64]) -> Vec<f64> {
    input
        .iter()
        .zip(upstream)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

/// Per-element scale applied by inverted dropout; `None` means identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutMask {
    pub fn identity() -> Self {
        Self(None)
    }

    pub fn scales(&self) -> Option<&[f64]> {
        self.0.as_deref()
    }

    pub fn backward(&self, upstream: &[f64]) -> Vec<f64> {
        match &self.0 {
            None => upstream.to_vec(),
            Some(scales) => upstream.iter().zip(scales).map(|(g, s)| g * s).collect(),
        }
    }
}

/// Inverted dropout. Training mode zeroes each element with probability
/// `rate` and scales survivors by `1 / (1 - rate)`; evaluation mode is the
/// identity and draws nothing from `rng`.
pub fn apply_dropout<R: Rng + ?Sized>(
    input: &[f64],
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Vec<f64>, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((input.to_vec(), DropoutMask::identity()));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let scales: Vec<f64> = input
        .iter()
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect();
    let out = input.iter().zip(&scales).map(|(x, s)| x * s).collect();
    Ok((out, DropoutMask(Some(scales))))
}

/// Returns `(x / |x|, |x|)`.
pub fn l2_normalize(input: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = norm(input);
    if n.is_nan() || n <= EPS_NORM {
        return Err(Error::DegenerateInput(format!(
            "cannot normalize a vector of norm {n:e}"
        )));
    }
    Ok((input.iter().map(|x| x / n).collect(), n))
}

/// Applies the Jacobian `(I - u u^T) / |x|` to `upstream`.
pub fn l2_normalize_backward(unit: &[f64], input_norm: f64, upstream: &[f64]) -> Vec<f64> {
    let proj = dot(unit, upstream);
    unit.iter()
        .zip(upstream)
        .map(|(u, g)| (g - u * proj) / input_norm)
        .collect()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > EPS_NORM && nb > EPS_NORM) {
        return Err(Error::DegenerateInput(format!(
            "cosine similarity with norms {na:e} and {nb:e}"
        )));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Gradients of `upstream * cos(a, b)` with respect to `a` and `b`.
pub fn cosine_similarity_backward(
    a: &[f64],
    b: &[f64],
    upstream: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (na, nb) = (norm(a), norm(b));
    if !(na > EPS_NORM && nb > EPS_NORM) || a.len() != b.len() {
        return Err(Error::DegenerateInput(format!(
            "cosine backward with norms {na:e} and {nb:e}"
        )));
    }
    let cos = dot(a, b) / (na * nb);
    let inv = 1.0 / (na * nb);
    let grad_a = a
        .iter()
        .zip(b)
        .map(|(x, y)| upstream * (y * inv - cos * x / (na * na)))
        .collect();
    let grad_b = a
        .iter()
        .zip(b)
        .map(|(x, y)| upstream * (x * inv - cos * y / (nb * nb)))
        .collect();
    Ok((grad_a, grad_b))
}

/// `-log softmax(logits)[true_class]` and its gradient `softmax - one_hot`.
pub fn softmax_cross_entropy(logits: &[f64], true_class: usize) -> Result<(f64, Vec<f64>)> {
    if true_class >= logits.len() {
        return Err(invalid(format!(
            "class {true_class} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_sum = max + sum.ln();
    let loss = (log_sum - logits[true_class]).max(0.0);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[true_class] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn linear_examples() {
        let y = apply_linear(&[1.0, 0.0], &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(y, vec![1.0, 0.0]);
        let y = apply_linear(&[1.0, 2.0], &[1.0, 1.0], &[-3.0]).unwrap();
        assert_eq!(y, vec![0.0]);
        assert!(matches!(
            apply_linear(&[1.0, 2.0], &[1.0, 1.0, 1.0], &[0.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn linear_backward_accumulates() {
        let x = [1.0, 2.0];
        let w = [0.5, -1.0, 2.0, 0.0];
        let mut gw = [1.0; 4];
        let mut gb = [0.0; 2];
        let gx = linear_backward(&x, &w, &[1.0, -1.0], &mut gw, &mut gb).unwrap();
        assert_eq!(gw, [2.0, 3.0, 0.0, -1.0]);
        assert_eq!(gb, [1.0, -1.0]);
        assert_eq!(gx, vec![-1.5, -1.0]);
    }

    #[test]
    fn relu_examples() {
        let x = [-1.0, 0.0, 2.0];
        assert_eq!(apply_relu(&x), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu_backward(&x, &[1.0, 1.0, 1.0]), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn dropout_rate_zero_and_eval_are_identity() {
        let x = [0.3, -2.0, 5.0];
        let (y, mask) = apply_dropout(&x, 0.0, &mut rng(), true).unwrap();
        assert_eq!(y, x.to_vec());
        assert_eq!(mask, DropoutMask::identity());
        let (y, _) = apply_dropout(&x, 0.5, &mut rng(), false).unwrap();
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn dropout_rejects_bad_rate() {
        for rate in [-0.1, 1.0, 1.5, f64::NAN] {
            assert!(apply_dropout(&[1.0], rate, &mut rng(), true).is_err());
        }
    }

    #[test]
    fn dropout_monte_carlo_mean() {
        let mut r = rng();
        let n = 100_000;
        let mut total = 0.0;
        for _ in 0..n {
            total += apply_dropout(&[1.0], 0.5, &mut r, true).unwrap().0[0];
        }
        let mean = total / n as f64;
        assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn dropout_backward_uses_same_mask() {
        let mut r = rng();
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let (y, mask) = apply_dropout(&x, 0.4, &mut r, true).unwrap();
        let g = mask.backward(&[1.0; 6]);
        for ((yi, xi), gi) in y.iter().zip(&x).zip(&g) {
            assert_eq!(*yi, xi * gi);
        }
    }

    #[test]
    fn dropout_is_reproducible() {
        let x = vec![1.0; 32];
        let a = apply_dropout(&x, 0.5, &mut rng(), true).unwrap();
        let b = apply_dropout(&x, 0.5, &mut rng(), true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normalize_examples() {
        let (u, n) = l2_normalize(&[3.0, 4.0]).unwrap();
        assert_eq!(n, 5.0);
        assert!((u[0] - 0.6).abs() < 1e-15 && (u[1] - 0.8).abs() < 1e-15);
        let unit = [0.0, 1.0, 0.0];
        assert_eq!(l2_normalize(&unit).unwrap().0, unit.to_vec());
        assert!(matches!(
            l2_normalize(&[0.0, 0.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(l2_normalize(&[1e-13, 0.0]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, g) = softmax_cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g, vec![-0.5, 0.5]);

        let (l, _) = softmax_cross_entropy(&[1.0, -1.0], 0).unwrap();
        assert!((l - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.1269).abs() < 1e-4);

        let (l, g) = softmax_cross_entropy(&[1000.0, 0.0], 0).unwrap();
        assert!(l.is_finite() && l.abs() < 1e-300);
        assert!(g.iter().all(|x| x.is_finite()));

        assert!(softmax_cross_entropy(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn cross_entropy_uniform_is_log_n() {
        for n in [2usize, 3, 10, 1251] {
            let (l, _) = softmax_cross_entropy(&vec![0.7; n], n / 2).unwrap();
            assert!((l - (n as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(1000.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        let a = [0.3, -1.2, 0.8];
        let b = [1.1, 0.4, -0.5];
        let err = grad_check(
            |p| {
                let v = cosine_similarity(&p[..3], &p[3..]).unwrap();
                let (ga, gb) = cosine_similarity_backward(&p[..3], &p[3..], 1.0).unwrap();
                (v, [ga, gb].concat())
            },
            &[a, b].concat(),
            1e-6,
        );
        assert!(err <= 1e-4, "{err}");
    }
}
