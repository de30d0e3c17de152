//! Set matching between ground truths and queries, and the loss stack.

mod ctc;
mod focal;
mod hungarian;
mod loss;

pub use ctc::{ctc_forward, ctc_greedy_decode, ctc_required_steps};
pub use focal::{focal_cost, COST_EPS};
pub use hungarian::{hungarian, CostMatrix, MatchResult};
pub use loss::{
    bernstein_matrix, build_cost_matrix, coord_cost, encoder_cost_matrix, loss_decoder, loss_encoder, match_layer,
    total_loss, DecoderLoss, EncoderLoss, LossBreakdown, LossConfig, QueryView, Target,
};
