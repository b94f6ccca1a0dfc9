use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Ablation variants.
///
/// | variant | separation matrix | orthogonality loss |
/// |---------|-------------------|--------------------|
/// | `CE`    | no                | no                 |
/// | `MSM`   | yes               | no                 |
/// | `FOP`   | no                | yes                |
/// | `OURS`  | yes               | yes                |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    Ce,
    Msm,
    Fop,
    Ours,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ce, Variant::Msm, Variant::Fop, Variant::Ours];

    pub fn uses_matrix(self) -> bool {
        matches!(self, Variant::Msm | Variant::Ours)
    }

    pub fn uses_oc(self) -> bool {
        matches!(self, Variant::Fop | Variant::Ours)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ce => "CE",
            Variant::Msm => "MSM",
            Variant::Fop => "FOP",
            Variant::Ours => "OURS",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CE" => Ok(Variant::Ce),
            "MSM" => Ok(Variant::Msm),
            "FOP" => Ok(Variant::Fop),
            "OURS" => Ok(Variant::Ours),
            _ => Err(invalid(format!(
                "unknown variant {s:?} (expected CE, MSM, FOP or OURS)"
            ))),
        }
    }
}

/// How the orthogonality loss aggregates pair cosines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OcNormalization {
    /// Average over pairs; empty pair sets contribute 0.
    Mean,
    /// Plain sums.
    Sum,
}

/// Which vectors enter the orthogonality loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OcPairScope {
    /// Fused embeddings only.
    FusedOnly,
    /// Face and voice embeddings as separate items sharing the speaker label.
    ModalityPooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Voice,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::Face => Modality::Voice,
            Modality::Voice => Modality::Face,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Face => "face",
            Modality::Voice => "voice",
        })
    }
}

impl FromStr for Modality {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "face" => Ok(Modality::Face),
            "voice" => Ok(Modality::Voice),
            _ => Err(invalid(format!("unknown modality {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_speakers: usize,
    pub face_in_dim: usize,
    pub voice_in_dim: usize,
    pub embed_dim: usize,
    pub dropout_rate: f64,
    pub alpha: f64,
    pub variant: Variant,
    pub oc_normalization: OcNormalization,
    pub oc_pair_scope: OcPairScope,
    /// Re-normalize the fused embedding before the logits.
    #[serde(default)]
    pub renormalize_fused: bool,
    /// With the separation matrix: map the fused embedding to `n_speakers - 1`
    /// dimensions through a trainable bias-free layer instead of requiring
    /// `embed_dim = n_speakers - 1`.
    #[serde(default)]
    pub projection: bool,
}

pub const DEFAULT_EMBED_DIM: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 1.0;

impl ModelConfig {
    /// Defaults for `variant`: 128-dimensional heads, with a projection to
    /// `n_speakers - 1` dimensions in front of the separation matrix when it is
    /// used; `alpha = 1` when the orthogonality loss is used, 0 otherwise.
    pub fn for_variant(
        variant: Variant,
        n_speakers: usize,
        face_in_dim: usize,
        voice_in_dim: usize,
    ) -> Self {
        Self {
            n_speakers,
            face_in_dim,
            voice_in_dim,
            embed_dim: DEFAULT_EMBED_DIM,
            dropout_rate: DEFAULT_DROPOUT,
            alpha: if variant.uses_oc() {
                DEFAULT_ALPHA
            } else {
                0.0
            },
            variant,
            oc_normalization: OcNormalization::Mean,
            oc_pair_scope: OcPairScope::FusedOnly,
            renormalize_fused: false,
            projection: variant.uses_matrix(),
        }
    }

    /// Heads of width `n_speakers - 1` feeding the separation matrix directly.
    pub fn direct(
        variant: Variant,
        n_speakers: usize,
        face_in_dim: usize,
        voice_in_dim: usize,
    ) -> Self {
        Self {
            embed_dim: n_speakers.saturating_sub(1),
            projection: false,
            ..Self::for_variant(variant, n_speakers, face_in_dim, voice_in_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(invalid(format!(
                "need at least 2 speakers, got {}",
                self.n_speakers
            )));
        }
        if self.face_in_dim == 0 || self.voice_in_dim == 0 || self.embed_dim == 0 {
            return Err(invalid("all dimensions must be positive"));
        }
        if self.projection && !self.variant.uses_matrix() {
            return Err(invalid(format!(
                "variant {} has no separation matrix to project onto",
                self.variant
            )));
        }
        if self.variant.uses_matrix() && !self.projection && self.embed_dim != self.n_speakers - 1 {
            return Err(invalid(format!(
                "variant {} without projection needs embed_dim = n_speakers - 1 = {}, got {}",
                self.variant,
                self.n_speakers - 1,
                self.embed_dim
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("alpha {} must be >= 0", self.alpha)));
        }
        if !self.variant.uses_oc() && self.alpha != 0.0 {
            return Err(invalid(format!(
                "variant {} trains with cross-entropy only; alpha must be 0",
                self.variant
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}
