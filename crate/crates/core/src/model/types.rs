use crate::diffmath::Var;

/// Head outputs of one decoder layer, as tape handles.
#[derive(Debug, Clone, Copy)]
pub struct LayerPrediction {
    /// `[K, N]` per-point instance logits.
    pub instance_logits: Var,
    /// `[K, N, vocab + 1]`, blank at class 0.
    pub char_logits: Var,
    /// `[K, N, 2]` center points.
    pub center: Var,
    /// `[K, N, 2]` top boundary points.
    pub top: Var,
    /// `[K, N, 2]` bottom boundary points.
    pub bot: Var,
}

/// Dense per-pixel proposal outputs of the encoder.
#[derive(Debug, Clone)]
pub struct EncoderPrediction {
    /// `[S]` text/non-text logits over all pixels of all levels.
    pub score_logits: Var,
    /// `[S, 4, 2]` Bezier control points.
    pub control: Var,
    /// Pixels outside the padding mask; these never become proposals.
    pub valid: Vec<bool>,
}
