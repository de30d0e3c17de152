//! The spotting network: convolutional stem, deformable encoder, Bezier
//! proposals, point queries, a single decoder, and four parallel heads.

mod config;
pub mod layers;
mod network;
mod types;

pub use config::ModelConfig;
pub use network::{bezier_from_offsets, select_top_k, ModelOutput, ProposalSet, Pyramid, QueryState, SpotterModel};
pub use types::{EncoderPrediction, LayerPrediction};

#[cfg(test)]
mod tests;
