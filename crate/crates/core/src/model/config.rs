use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Architecture hyper-parameters. Defaults follow the full-size setting;
/// [`ModelConfig::toy`] is the desk-scale variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Sampling points per head per level in deformable attention.
    pub n_sample_points: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    /// Number of proposals `K`.
    pub k: usize,
    /// Points per query group `N`.
    pub n: usize,
    pub n_levels: usize,
    /// Glyph classes, excluding the CTC blank.
    pub vocab_size: usize,
    pub ffn_dim: usize,
    /// Output channels of the three stride-2 stem convolutions.
    pub stem_channels: [usize; 3],
    pub pos_temperature: f64,
    /// Clamp applied before every inverse sigmoid.
    pub logit_eps: f64,
    /// One instance/character/boundary head applied to every decoder layer.
    pub share_heads: bool,
    /// Half-width of the initial proposal curves, in normalized units.
    pub proposal_span: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            n_heads: 8,
            n_sample_points: 4,
            n_enc_layers: 6,
            n_dec_layers: 6,
            k: 100,
            n: 25,
            n_levels: 4,
            vocab_size: 37,
            ffn_dim: 1024,
            stem_channels: [32, 64, 128],
            pos_temperature: 10000.0,
            logit_eps: 1e-3,
            share_heads: true,
            proposal_span: 0.1,
        }
    }
}

impl ModelConfig {
    /// d = 64, K = 20, N = 13, two encoder and two decoder layers, 12 glyphs.
    pub fn toy() -> Self {
        Self {
            d_model: 64,
            n_heads: 8,
            n_sample_points: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            k: 20,
            n: 13,
            n_levels: 3,
            vocab_size: 12,
            ffn_dim: 128,
            stem_channels: [16, 32, 64],
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Character classes including the blank.
    pub fn classes(&self) -> usize {
        self.vocab_size + 1
    }

    /// Downsampling factor of the coarsest level.
    pub fn coarsest_stride(&self) -> usize {
        8 << (self.n_levels - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_model % 4 != 0 {
            return bad(format!("d_model {} must be a multiple of 4 for the 2D positional encoding", self.d_model));
        }
        if self.n < 2 || self.k == 0 || self.n_levels == 0 || self.n_sample_points == 0 || self.vocab_size == 0 {
            return bad("n ≥ 2 and k, n_levels, n_sample_points, vocab_size ≥ 1 are required".into());
        }
        if !(self.logit_eps > 0.0 && self.logit_eps < 0.5) {
            return bad(format!("logit_eps {} outside (0, 0.5)", self.logit_eps));
        }
        Ok(())
    }
}
