use super::forward::embed_eval;
use super::{Modality, ModelParams};
use crate::diffcore::cosine_similarity;
use crate::error::{invalid, Result};

/// Eval-mode unit embedding of a raw vector from `modality`.
pub fn embed(params: &ModelParams, raw: &[f64], modality: Modality) -> Result<Vec<f64>> {
    match modality {
        Modality::Face => embed_eval(&params.face_weight, &params.face_bias, raw, "face"),
        Modality::Voice => embed_eval(&params.voice_weight, &params.voice_bias, raw, "voice"),
    }
}

/// Verification score: cosine between the projected face and voice
/// embeddings (not the fused vector).
pub fn score_pair(params: &ModelParams, face_raw: &[f64], voice_raw: &[f64]) -> Result<f64> {
    let f = embed(params, face_raw, Modality::Face)?;
    let v = embed(params, voice_raw, Modality::Voice)?;
    cosine_similarity(&f, &v)
}

/// Index of the gallery item (of the other modality) most similar to the
/// probe. Ties go to the lowest index.
pub fn match_probe<G: AsRef<[f64]>>(
    params: &ModelParams,
    probe: &[f64],
    probe_modality: Modality,
    gallery: &[G],
) -> Result<usize> {
    if gallery.is_empty() {
        return Err(invalid("empty gallery"));
    }
    let p = embed(params, probe, probe_modality)?;
    let target = probe_modality.other();
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, g) in gallery.iter().enumerate() {
        let e = embed(params, g.as_ref(), target)?;
        let s = cosine_similarity(&p, &e)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}
