use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which direction(s) of cross-modal conditioning are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionMode {
    /// Two independent encoders.
    None,
    /// Text representations are injected into the vision encoder.
    T2v,
    /// Vision representations are injected into the text encoder.
    V2t,
    /// Both directions.
    Tw,
}

impl InteractionMode {
    pub const ALL: [InteractionMode; 4] = [Self::None, Self::T2v, Self::V2t, Self::Tw];

    /// Vision encoder runs a conditioned pass.
    pub fn conditions_vision(self) -> bool {
        matches!(self, Self::T2v | Self::Tw)
    }

    /// Text encoder runs a conditioned pass.
    pub fn conditions_text(self) -> bool {
        matches!(self, Self::V2t | Self::Tw)
    }
}

impl fmt::Display for InteractionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::T2v => "t2v",
            Self::V2t => "v2t",
            Self::Tw => "tw",
        })
    }
}

impl FromStr for InteractionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "t2v" => Ok(Self::T2v),
            "v2t" => Ok(Self::V2t),
            "tw" => Ok(Self::Tw),
            other => Err(Error::invalid(format!("unknown interaction mode {other:?}"))),
        }
    }
}

/// One of the four self-attention weight matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttnWeight {
    Q,
    K,
    V,
    O,
}

impl AttnWeight {
    pub const ALL: [AttnWeight; 4] = [Self::Q, Self::K, Self::V, Self::O];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Q => "q",
            Self::K => "k",
            Self::V => "v",
            Self::O => "o",
        }
    }
}

impl FromStr for AttnWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().trim_start_matches("w_") {
            "q" => Ok(Self::Q),
            "k" => Ok(Self::K),
            "v" => Ok(Self::V),
            "o" => Ok(Self::O),
            other => Err(Error::invalid(format!("unknown attention weight {other:?}"))),
        }
    }
}

/// Parses `"k,v,o"` into a target set; the empty string is the empty set.
pub fn parse_lora_targets(s: &str) -> Result<BTreeSet<AttnWeight>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

pub fn format_lora_targets(t: &BTreeSet<AttnWeight>) -> String {
    t.iter().map(|w| w.as_str()).collect::<Vec<_>>().join(",")
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_t: usize,
    pub d_v: usize,
    pub n_layers_text: usize,
    pub n_layers_vision: usize,
    pub n_heads: usize,
    /// Number of top layers that are conditioned and LoRA-adapted.
    pub top_n: usize,
    pub interaction_mode: InteractionMode,
    pub lora_rank: usize,
    pub lora_targets: BTreeSet<AttnWeight>,
    /// LoRA scale numerator; `None` means equal to the rank.
    pub lora_alpha: Option<f64>,
    pub d_f: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub image_side: usize,
    pub patch_size: usize,
    pub freeze_backbone: bool,
    /// Build the projection head (off for the classification-only variant).
    pub projection_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Desk-scale defaults.
    pub fn toy() -> Self {
        Self {
            d_t: 64,
            d_v: 64,
            n_layers_text: 4,
            n_layers_vision: 4,
            n_heads: 4,
            top_n: 2,
            interaction_mode: InteractionMode::T2v,
            lora_rank: 4,
            lora_targets: [AttnWeight::K, AttnWeight::V, AttnWeight::O].into_iter().collect(),
            lora_alpha: None,
            d_f: 64,
            vocab_size: 128,
            max_text_len: 16,
            image_side: 32,
            patch_size: 8,
            freeze_backbone: true,
            projection_head: true,
        }
    }

    /// Reference hyperparameters of the full-scale setting (ViT-B/32 widths).
    pub fn paper() -> Self {
        Self {
            d_t: 512,
            d_v: 768,
            n_layers_text: 12,
            n_layers_vision: 12,
            n_heads: 8,
            top_n: 4,
            interaction_mode: InteractionMode::T2v,
            lora_rank: 8,
            lora_targets: [AttnWeight::K, AttnWeight::V, AttnWeight::O].into_iter().collect(),
            lora_alpha: None,
            d_f: 1024,
            vocab_size: 49408,
            max_text_len: 77,
            image_side: 224,
            patch_size: 32,
            freeze_backbone: true,
            projection_head: true,
        }
    }

    /// Tiny configuration used by gradient checks.
    pub fn micro(mode: InteractionMode) -> Self {
        Self {
            d_t: 8,
            d_v: 8,
            n_layers_text: 1,
            n_layers_vision: 1,
            n_heads: 2,
            top_n: 1,
            interaction_mode: mode,
            lora_rank: 2,
            lora_targets: AttnWeight::ALL.into_iter().collect(),
            lora_alpha: None,
            d_f: 8,
            vocab_size: 12,
            max_text_len: 6,
            image_side: 8,
            patch_size: 4,
            freeze_backbone: true,
            projection_head: true,
        }
    }

    pub fn patch_count(&self) -> usize {
        let g = self.image_side / self.patch_size;
        g * g
    }

    pub fn fused_dim(&self) -> usize {
        self.d_t + self.d_v
    }

    pub fn lora_scale(&self) -> f64 {
        self.lora_alpha.unwrap_or(self.lora_rank as f64) / self.lora_rank as f64
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut e = Vec::new();
        for (name, v) in [
            ("d_t", self.d_t),
            ("d_v", self.d_v),
            ("n_layers_text", self.n_layers_text),
            ("n_layers_vision", self.n_layers_vision),
            ("n_heads", self.n_heads),
            ("d_f", self.d_f),
            ("vocab_size", self.vocab_size),
            ("image_side", self.image_side),
            ("patch_size", self.patch_size),
        ] {
            if v == 0 {
                e.push(format!("{name} must be positive"));
            }
        }
        if self.n_heads > 0 && (!self.d_t.is_multiple_of(self.n_heads) || !self.d_v.is_multiple_of(self.n_heads)) {
            e.push(format!(
                "n_heads {} must divide d_t {} and d_v {}",
                self.n_heads, self.d_t, self.d_v
            ));
        }
        let min_layers = self.n_layers_text.min(self.n_layers_vision);
        if self.top_n > min_layers {
            e.push(format!("top_n {} exceeds min layer count {min_layers}", self.top_n));
        }
        if self.lora_rank == 0 && !self.lora_targets.is_empty() {
            e.push("lora_targets must be empty when lora_rank is 0".to_string());
        }
        if self.lora_rank > 0 && self.lora_targets.is_empty() {
            e.push("lora_rank > 0 needs at least one LoRA target".to_string());
        }
        if let Some(a) = self.lora_alpha {
            if !(a > 0.0 && a.is_finite()) {
                e.push(format!("lora_alpha must be positive, got {a}"));
            }
        }
        if self.max_text_len < 2 {
            e.push("max_text_len must be at least 2 (bos + eos)".to_string());
        }
        if self.patch_size > 0 && !self.image_side.is_multiple_of(self.patch_size) {
            e.push(format!(
                "patch_size {} must divide image_side {}",
                self.patch_size, self.image_side
            ));
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        ModelConfig::toy().validate().unwrap();
        ModelConfig::paper().validate().unwrap();
        ModelConfig::micro(InteractionMode::Tw).validate().unwrap();
        assert_eq!(ModelConfig::toy().patch_count(), 16);
    }

    #[test]
    fn paper_preset_values() {
        let p = ModelConfig::paper();
        assert_eq!((p.top_n, p.lora_rank, p.d_f), (4, 8, 1024));
        assert_eq!(format_lora_targets(&p.lora_targets), "k,v,o");
    }

    #[test]
    fn validation_lists_every_problem() {
        let c = ModelConfig {
            n_heads: 3,
            top_n: 9,
            lora_rank: 0,
            patch_size: 5,
            ..ModelConfig::toy()
        };
        match c.validate() {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 4, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let mut v = serde_json::to_value(ModelConfig::toy()).unwrap();
        v["dropout"] = serde_json::json!(0.1);
        assert!(serde_json::from_value::<ModelConfig>(v).is_err());
    }

    #[test]
    fn targets_parse() {
        let t = parse_lora_targets("k,v,o").unwrap();
        assert_eq!(t.len(), 3);
        assert!(parse_lora_targets("").unwrap().is_empty());
        assert!(parse_lora_targets("k,x").is_err());
        assert_eq!("T2V".parse::<InteractionMode>().unwrap(), InteractionMode::T2v);
    }
}
