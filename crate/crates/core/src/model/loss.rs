use rand::Rng;

use super::forward::{backward_trace, forward_trace};
use super::{ModelConfig, ModelParams, OcNormalization, OcPairScope, TrainingInstance};
use crate::diffcore::{
    cosine_similarity, cosine_similarity_backward, softmax_cross_entropy, ParamTensor,
};
use crate::error::{invalid, shape, Error, Result};
use crate::simplex::SeparationMatrix;

/// A nonempty set of training instances.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub records: Vec<&'a TrainingInstance>,
}

impl<'a> Batch<'a> {
    pub fn new(records: Vec<&'a TrainingInstance>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean cross-entropy over the batch.
    pub cross_entropy: f64,
    /// Orthogonality loss before scaling by alpha.
    pub orthogonality: f64,
}

/// Orthogonality-constraint loss `1 - S_pos + |S_neg|` over unordered pairs.
pub fn oc_loss<V: AsRef<[f64]>>(
    embeddings: &[V],
    labels: &[usize],
    normalization: OcNormalization,
) -> Result<f64> {
    oc_loss_and_grad(embeddings, labels, normalization).map(|(l, _)| l)
}

/// [`oc_loss`] plus its gradient with respect to every embedding.
pub fn oc_loss_and_grad<V: AsRef<[f64]>>(
    embeddings: &[V],
    labels: &[usize],
    normalization: OcNormalization,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = embeddings.len();
    if n < 2 {
        return Err(invalid(format!(
            "orthogonality loss needs at least 2 embeddings, got {n}"
        )));
    }
    if labels.len() != n {
        return Err(shape(format!("{n} embeddings but {} labels", labels.len())));
    }

    let mut cosines = Vec::with_capacity(n * (n - 1) / 2);
    let (mut pos_sum, mut neg_sum) = (0.0, 0.0);
    let (mut pos_count, mut neg_count) = (0usize, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = cosine_similarity(embeddings[i].as_ref(), embeddings[j].as_ref())
                .map_err(|e| Error::DegenerateInput(format!("embeddings {i},{j}: {e}")))?;
            if labels[i] == labels[j] {
                pos_sum += c;
                pos_count += 1;
            } else {
                neg_sum += c;
                neg_count += 1;
            }
            cosines.push(c);
        }
    }

    let (pos_scale, neg_scale) = match normalization {
        OcNormalization::Sum => (1.0, 1.0),
        OcNormalization::Mean => (
            if pos_count > 0 {
                1.0 / pos_count as f64
            } else {
                0.0
            },
            if neg_count > 0 {
                1.0 / neg_count as f64
            } else {
                0.0
            },
        ),
    };
    let s_pos = pos_sum * pos_scale;
    let s_neg = neg_sum * neg_scale;
    let loss = 1.0 - s_pos + s_neg.abs();

    // d|s|/ds uses subgradient 0 at s = 0.
    let neg_sign = if s_neg > 0.0 {
        1.0
    } else if s_neg < 0.0 {
        -1.0
    } else {
        0.0
    };
    let dim = embeddings[0].as_ref().len();
    let mut grads = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let upstream = if labels[i] == labels[j] {
                -pos_scale
            } else {
                neg_sign * neg_scale
            };
            if upstream == 0.0 {
                continue;
            }
            let (ga, gb) = cosine_similarity_backward(
                embeddings[i].as_ref(),
                embeddings[j].as_ref(),
                upstream,
            )?;
            for (acc, g) in grads[i].iter_mut().zip(ga) {
                *acc += g;
            }
            for (acc, g) in grads[j].iter_mut().zip(gb) {
                *acc += g;
            }
        }
    }
    Ok((loss, grads))
}

/// `W x` for a row-major weight of shape `[out, x.len()]`.
fn bias_free(w: &ParamTensor, x: &[f64]) -> Vec<f64> {
    w.values
        .chunks_exact(x.len())
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Accumulates `g xᵀ` into the weight gradient and returns `Wᵀ g`.
fn bias_free_backward(w: &mut ParamTensor, x: &[f64], g: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut gx = vec![0.0; d];
    for (k, &gk) in g.iter().enumerate() {
        let row = &w.values[k * d..(k + 1) * d];
        let grow = &mut w.grad[k * d..(k + 1) * d];
        for j in 0..d {
            grow[j] += gk * x[j];
            gx[j] += gk * row[j];
        }
    }
    gx
}

/// Computes `mean CE + alpha * OC` over `batch` and writes the gradient of
/// that total into every trainable tensor of `params` (previous gradients
/// are cleared). The separation matrix is read-only.
///
/// Batches with a single instance skip the orthogonality term, which needs
/// at least one pair.
pub fn batch_loss<R: Rng + ?Sized>(
    params: &mut ModelParams,
    batch: &Batch<'_>,
    matrix: Option<&SeparationMatrix>,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    match (config.variant.uses_matrix(), matrix) {
        (true, None) => {
            return Err(invalid(format!(
                "variant {} requires the separation matrix",
                config.variant
            )))
        }
        (false, Some(_)) => {
            return Err(invalid(format!(
                "variant {} must not use the separation matrix",
                config.variant
            )))
        }
        (true, Some(m)) if m.n_classes() != config.n_speakers => {
            return Err(shape(format!(
                "separation matrix has {} classes, config has {} speakers",
                m.n_classes(),
                config.n_speakers
            )))
        }
        _ => {}
    }
    if let Some(r) = batch
        .records
        .iter()
        .find(|r| r.speaker >= config.n_speakers)
    {
        return Err(invalid(format!(
            "speaker index {} out of range for {} speakers",
            r.speaker, config.n_speakers
        )));
    }

    params.zero_grad();

    let mut traces = Vec::with_capacity(batch.len());
    let mut records = Vec::with_capacity(batch.len());
    for (i, rec) in batch.records.iter().enumerate() {
        match forward_trace(params, config, &rec.face, &rec.voice, training, rng) {
            Ok(t) => {
                traces.push(t);
                records.push(*rec);
            }
            Err(Error::DegenerateInput(m)) => {
                return Err(Error::DegenerateInput(format!(
                    "batch item {i} (speaker {}): {m}",
                    rec.speaker
                )))
            }
            Err(e) => return Err(e),
        }
    }
    if records.is_empty() {
        return Err(Error::DegenerateInput(
            "every batch item is degenerate".into(),
        ));
    }
    let b = records.len();
    let inv_b = 1.0 / b as f64;

    let mut fused_grads = Vec::with_capacity(b);
    let mut ce_total = 0.0;
    for (t, rec) in traces.iter().zip(&records) {
        let logits = match matrix {
            Some(m) => match &params.projection {
                Some(l) => m.class_logits(&bias_free(l, &t.fused))?.into_vec(),
                None => m.class_logits(&t.fused)?.into_vec(),
            },
            None => {
                let c = params
                    .classifier
                    .as_ref()
                    .expect("classifier present without matrix");
                bias_free(c, &t.fused)
            }
        };
        let (ce, mut logit_grad) = softmax_cross_entropy(&logits, rec.speaker)?;
        ce_total += ce;
        logit_grad.iter_mut().for_each(|g| *g *= inv_b);
        let fused_grad = match matrix {
            Some(m) => {
                let g = m.backward(&logit_grad)?;
                match params.projection.as_mut() {
                    Some(l) => bias_free_backward(l, &t.fused, &g),
                    None => g,
                }
            }
            None => {
                let c = params
                    .classifier
                    .as_mut()
                    .expect("classifier present without matrix");
                bias_free_backward(c, &t.fused, &logit_grad)
            }
        };
        fused_grads.push(fused_grad);
    }
    let cross_entropy = ce_total * inv_b;

    let mut orthogonality = 0.0;
    let mut face_extra: Option<Vec<Vec<f64>>> = None;
    let mut voice_extra: Option<Vec<Vec<f64>>> = None;
    if config.alpha > 0.0 && b >= 2 {
        let labels: Vec<usize> = records.iter().map(|r| r.speaker).collect();
        match config.oc_pair_scope {
            OcPairScope::FusedOnly => {
                let items: Vec<&[f64]> = traces.iter().map(|t| t.fused.as_slice()).collect();
                let (l, grads) = oc_loss_and_grad(&items, &labels, config.oc_normalization)?;
                orthogonality = l;
                for (fg, g) in fused_grads.iter_mut().zip(grads) {
                    for (a, x) in fg.iter_mut().zip(g) {
                        *a += config.alpha * x;
                    }
                }
            }
            OcPairScope::ModalityPooled => {
                let items: Vec<&[f64]> = traces
                    .iter()
                    .map(|t| t.face.unit.as_slice())
                    .chain(traces.iter().map(|t| t.voice.unit.as_slice()))
                    .collect();
                let pooled_labels: Vec<usize> = labels.iter().chain(&labels).copied().collect();
                let (l, mut grads) =
                    oc_loss_and_grad(&items, &pooled_labels, config.oc_normalization)?;
                orthogonality = l;
                for g in grads.iter_mut() {
                    g.iter_mut().for_each(|x| *x *= config.alpha);
                }
                let voice = grads.split_off(b);
                face_extra = Some(grads);
                voice_extra = Some(voice);
            }
        }
    }

    for (i, t) in traces.iter().enumerate() {
        backward_trace(
            t,
            params,
            &fused_grads[i],
            face_extra.as_ref().map(|g| g[i].as_slice()),
            voice_extra.as_ref().map(|g| g[i].as_slice()),
        )?;
    }

    Ok(LossBreakdown {
        total: cross_entropy + config.alpha * orthogonality,
        cross_entropy,
        orthogonality,
    })
}
