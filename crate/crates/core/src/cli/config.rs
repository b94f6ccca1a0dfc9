use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PositivePairing, SplitMode, SplitRatios};
use crate::diffcore::AdamConfig;
use crate::error::{invalid, Error, Result};
use crate::model::{Modality, ModelConfig, OcNormalization, OcPairScope, Variant};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FACEVOICE_OUT";
const FALLBACK_OUT: &str = "runs";

/// Everything that determines a run. Serialized verbatim into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    /// `None` picks the default: 128, or `n_speakers - 1` for matrix
    /// variants without the projection.
    pub embed_dim: Option<usize>,
    /// Trainable projection in front of the separation matrix (matrix
    /// variants only; ignored otherwise).
    pub projection: bool,
    pub dropout_rate: f64,
    /// `None` picks the variant default (1 with the orthogonality loss, else 0).
    pub alpha: Option<f64>,
    pub oc_normalization: OcNormalization,
    pub oc_pair_scope: OcPairScope,
    pub renormalize_fused: bool,

    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub decay_rate: f64,
    /// Model init, shuffling and dropout.
    pub seed: u64,
    /// Split and trial construction.
    pub data_seed: u64,

    pub dataset: Option<PathBuf>,
    /// Keep only records carrying this tag.
    pub tag: Option<String>,
    pub split_mode: SplitMode,
    pub split_ratios: SplitRatios,
    pub positive_pairing: PositivePairing,
    /// Upper bound; capped by the positive pairs the validation split offers.
    pub n_valid_trials: usize,
    pub n_verify_trials: usize,
    /// Per gallery size.
    pub n_match_trials: usize,
    pub gallery_sizes: Vec<usize>,
    pub probe_modality: Modality,

    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Ours,
            embed_dim: None,
            projection: true,
            dropout_rate: 0.5,
            alpha: None,
            oc_normalization: OcNormalization::Mean,
            oc_pair_scope: OcPairScope::FusedOnly,
            renormalize_fused: false,
            epochs: 50,
            batch_size: 64,
            base_lr: 3e-3,
            decay_rate: 0.95,
            seed: 0,
            data_seed: 0,
            dataset: None,
            tag: None,
            split_mode: SplitMode::SeenHeard,
            split_ratios: SplitRatios::default(),
            positive_pairing: PositivePairing::AnyInstance,
            n_valid_trials: 200,
            n_verify_trials: 2000,
            n_match_trials: 1000,
            gallery_sizes: vec![2, 4, 6, 8, 10],
            probe_modality: Modality::Voice,
            out: default_out_root(),
        }
    }
}

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT))
}

/// Recursively overlays `top` onto `base`; objects merge, everything else replaces.
fn overlay(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Defaults overlaid with a (possibly partial) JSON config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut merged = serde_json::to_value(Self::default())?;
        overlay(&mut merged, file);
        serde_json::from_value(merged)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        self.adam().validate()?;
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if let Some(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(invalid(format!("alpha {a} must be >= 0")));
            }
        }
        if self.embed_dim == Some(0) {
            return Err(invalid("embed_dim must be positive"));
        }
        if self.n_verify_trials < 2 {
            return Err(invalid("need at least 2 verification trials"));
        }
        if self.n_match_trials == 0 {
            return Err(invalid("need at least 1 matching trial per gallery size"));
        }
        if self.gallery_sizes.is_empty() {
            return Err(invalid("gallery size list is empty"));
        }
        if let Some(&n) = self.gallery_sizes.iter().find(|&&n| n < 2) {
            return Err(invalid(format!("gallery size {n} is below 2")));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            base_lr: self.base_lr,
            decay_rate: self.decay_rate,
            ..AdamConfig::default()
        }
    }

    pub fn model_config(
        &self,
        n_speakers: usize,
        face_in_dim: usize,
        voice_in_dim: usize,
    ) -> Result<ModelConfig> {
        let mut c = if self.projection || !self.variant.uses_matrix() {
            ModelConfig::for_variant(self.variant, n_speakers, face_in_dim, voice_in_dim)
        } else {
            ModelConfig::direct(self.variant, n_speakers, face_in_dim, voice_in_dim)
        };
        if let Some(d) = self.embed_dim {
            c.embed_dim = d;
        }
        if let Some(a) = self.alpha {
            c.alpha = a;
        }
        c.dropout_rate = self.dropout_rate;
        c.oc_normalization = self.oc_normalization;
        c.oc_pair_scope = self.oc_pair_scope;
        c.renormalize_fused = self.renormalize_fused;
        c.validate()?;
        Ok(c)
    }

    /// The same run with another variant; explicit `alpha` and `embed_dim`
    /// carry over only where the variant admits them.
    pub fn for_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        c.variant = variant;
        if !variant.uses_oc() {
            c.alpha = None;
        }
        if variant.uses_matrix() && !self.projection {
            c.embed_dim = None;
        }
        c
    }

    /// Digest of the settings that affect results (output location and
    /// dataset path excluded; the dataset is digested by content).
    pub fn digest(&self) -> Result<String> {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.dataset = None;
        Ok(crate::digest_hex(&serde_json::to_vec(&c)?))
    }

    pub fn to_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}
