use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the visual feature vector enters the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Text only.
    #[default]
    None,
    /// Projected pseudo-word prepended to the source.
    ImgW,
    /// Gate over the final encoder states.
    EncGate,
    /// Time-dependent gate over the pre-softmax logits.
    DecGate,
    EncDecGate,
    /// Target embeddings modulated by `tanh(W·V)`.
    TrgMul,
    /// Deprecated: logit gate driven by the visual feature alone, so the
    /// same vocabulary is suppressed at every time step.
    DecGateStatic,
}

impl Fusion {
    pub fn needs_visual(self) -> bool {
        self != Fusion::None
    }
    pub fn uses_img_w(self) -> bool {
        self == Fusion::ImgW
    }
    pub fn uses_enc_gate(self) -> bool {
        matches!(self, Fusion::EncGate | Fusion::EncDecGate)
    }
    pub fn uses_dec_gate(self) -> bool {
        matches!(self, Fusion::DecGate | Fusion::EncDecGate | Fusion::DecGateStatic)
    }
    pub fn uses_trg_mul(self) -> bool {
        self == Fusion::TrgMul
    }

    pub const ALL: [Fusion; 7] = [
        Fusion::None,
        Fusion::ImgW,
        Fusion::EncGate,
        Fusion::DecGate,
        Fusion::EncDecGate,
        Fusion::TrgMul,
        Fusion::DecGateStatic,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    /// Padded tokens per training batch.
    pub batch_tokens: usize,
    pub visual_dim: usize,
    pub fusion: Fusion,
    /// Longest source or target sequence, after subword segmentation.
    pub max_len: usize,
    pub gate_bias_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            dropout: 0.1,
            label_smoothing: 0.1,
            batch_tokens: 512,
            visual_dim: 80,
            fusion: Fusion::None,
            max_len: 256,
            gate_bias_init: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.visual_dim == 0 {
            return fail("d_model, n_heads, d_ff and visual_dim must be positive".into());
        }
        if self.batch_tokens == 0 || self.max_len == 0 {
            return fail("batch_tokens and max_len must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_model % 2 != 0 {
            return fail(format!("d_model {} must be even for sinusoidal positions", self.d_model));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail(format!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if !self.gate_bias_init.is_finite() {
            return fail("gate_bias_init must be finite".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
