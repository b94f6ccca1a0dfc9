use rand::Rng;

use super::{ModelConfig, ModelParams};
use crate::diffcore::{
    apply_dropout, apply_linear, apply_relu, l2_normalize, l2_normalize_backward, linear_backward,
    relu_backward, DropoutMask, ParamTensor,
};
use crate::error::{shape, Error, Result};

/// Redraws allowed when training-mode dropout silences every active unit.
const MAX_DROPOUT_REDRAWS: usize = 32;

/// Per-instance outputs: unit face and voice embeddings and their fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceEmbeddings {
    pub face: Vec<f64>,
    pub voice: Vec<f64>,
    pub fused: Vec<f64>,
}

/// Everything one head's backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct HeadTrace {
    input: Vec<f64>,
    pre_activation: Vec<f64>,
    mask: DropoutMask,
    norm: f64,
    pub(crate) unit: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct InstanceTrace {
    pub(crate) face: HeadTrace,
    pub(crate) voice: HeadTrace,
    fused_norm: Option<f64>,
    pub(crate) fused: Vec<f64>,
}

fn head_forward<R: Rng + ?Sized>(
    weight: &ParamTensor,
    bias: &ParamTensor,
    input: &[f64],
    dropout_rate: f64,
    training: bool,
    rng: &mut R,
    label: &str,
) -> Result<HeadTrace> {
    if input.len() != weight.shape()[1] {
        return Err(shape(format!(
            "{label} input has length {}, head expects {}",
            input.len(),
            weight.shape()[1]
        )));
    }
    let pre_activation = apply_linear(input, &weight.values, &bias.values)?;
    let activated = apply_relu(&pre_activation);
    if activated.iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateInput(format!(
            "{label} head output is all zeros after ReLU"
        )));
    }
    let mut attempt = 0;
    let (dropped, mask) = loop {
        let (dropped, mask) = apply_dropout(&activated, dropout_rate, rng, training)?;
        if dropped.iter().any(|&x| x != 0.0) {
            break (dropped, mask);
        }
        attempt += 1;
        if attempt >= MAX_DROPOUT_REDRAWS {
            return Err(Error::DegenerateInput(format!(
                "{label} head output is all zeros after dropout"
            )));
        }
    };
    let (unit, norm) =
        l2_normalize(&dropped).map_err(|e| Error::DegenerateInput(format!("{label} head: {e}")))?;
    Ok(HeadTrace {
        input: input.to_vec(),
        pre_activation,
        mask,
        norm,
        unit,
    })
}

/// Accumulates head parameter gradients from the gradient w.r.t. the unit output.
fn head_backward(
    trace: &HeadTrace,
    weight: &mut ParamTensor,
    bias: &mut ParamTensor,
    unit_grad: &[f64],
) -> Result<()> {
    let g = l2_normalize_backward(&trace.unit, trace.norm, unit_grad);
    let g = trace.mask.backward(&g);
    let g = relu_backward(&trace.pre_activation, &g);
    linear_backward(
        &trace.input,
        &weight.values,
        &g,
        &mut weight.grad,
        &mut bias.grad,
    )?;
    Ok(())
}

pub(crate) fn forward_trace<R: Rng + ?Sized>(
    params: &ModelParams,
    config: &ModelConfig,
    face_raw: &[f64],
    voice_raw: &[f64],
    training: bool,
    rng: &mut R,
) -> Result<InstanceTrace> {
    let face = head_forward(
        &params.face_weight,
        &params.face_bias,
        face_raw,
        config.dropout_rate,
        training,
        rng,
        "face",
    )?;
    let voice = head_forward(
        &params.voice_weight,
        &params.voice_bias,
        voice_raw,
        config.dropout_rate,
        training,
        rng,
        "voice",
    )?;
    let w = params.fusion_weight();
    let fused_raw: Vec<f64> = face
        .unit
        .iter()
        .zip(&voice.unit)
        .map(|(f, v)| w * f + (1.0 - w) * v)
        .collect();
    let (fused, fused_norm) = if config.renormalize_fused {
        let (u, n) = l2_normalize(&fused_raw)
            .map_err(|e| Error::DegenerateInput(format!("fused embedding: {e}")))?;
        (u, Some(n))
    } else {
        (fused_raw, None)
    };
    Ok(InstanceTrace {
        face,
        voice,
        fused_norm,
        fused,
    })
}

/// Backpropagates gradients w.r.t. the fused embedding and (optionally extra)
/// gradients w.r.t. the unit face/voice embeddings into `params`.
pub(crate) fn backward_trace(
    trace: &InstanceTrace,
    params: &mut ModelParams,
    fused_grad: &[f64],
    extra_face_grad: Option<&[f64]>,
    extra_voice_grad: Option<&[f64]>,
) -> Result<()> {
    let raw_grad = match trace.fused_norm {
        Some(n) => l2_normalize_backward(&trace.fused, n, fused_grad),
        None => fused_grad.to_vec(),
    };
    let w = params.fusion_weight();
    let dw_dlogit = w * (1.0 - w);
    let mut logit_grad = 0.0;
    let mut face_grad = Vec::with_capacity(raw_grad.len());
    let mut voice_grad = Vec::with_capacity(raw_grad.len());
    for (i, g) in raw_grad.iter().enumerate() {
        logit_grad += g * (trace.face.unit[i] - trace.voice.unit[i]);
        face_grad.push(w * g + extra_face_grad.map_or(0.0, |e| e[i]));
        voice_grad.push((1.0 - w) * g + extra_voice_grad.map_or(0.0, |e| e[i]));
    }
    params.fusion_logit.grad[0] += logit_grad * dw_dlogit;
    head_backward(
        &trace.face,
        &mut params.face_weight,
        &mut params.face_bias,
        &face_grad,
    )?;
    head_backward(
        &trace.voice,
        &mut params.voice_weight,
        &mut params.voice_bias,
        &voice_grad,
    )?;
    Ok(())
}

/// Face and voice embeddings plus their fusion for one instance.
/// Evaluation mode (`training = false`) skips dropout and draws nothing from `rng`.
pub fn forward_instance<R: Rng + ?Sized>(
    params: &ModelParams,
    config: &ModelConfig,
    face_raw: &[f64],
    voice_raw: &[f64],
    training: bool,
    rng: &mut R,
) -> Result<InstanceEmbeddings> {
    let t = forward_trace(params, config, face_raw, voice_raw, training, rng)?;
    Ok(InstanceEmbeddings {
        face: t.face.unit,
        voice: t.voice.unit,
        fused: t.fused,
    })
}

/// Eval-mode embedding of one modality: `normalize(relu(W x + b))`.
pub(crate) fn embed_eval(
    weight: &ParamTensor,
    bias: &ParamTensor,
    raw: &[f64],
    label: &str,
) -> Result<Vec<f64>> {
    // Evaluation mode never draws from the generator.
    let mut unused = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    head_forward(weight, bias, raw, 0.0, false, &mut unused, label).map(|t| t.unit)
}
