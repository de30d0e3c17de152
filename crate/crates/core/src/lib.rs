//! Text spotting with explicit point queries.
//!
//! Text instances are represented by `N` ordered points on a cubic Bezier
//! center curve. An encoder over a small multi-scale feature pyramid proposes
//! center curves, the top-`K` seed `K × N` point queries, and a single decoder
//! refines them before four parallel heads read out confidence, characters,
//! center points and boundary points. Training matches predictions to ground
//! truth with a cost that includes a CTC text term.

pub mod assignment;
pub mod data;
pub mod diffmath;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tape32 = diffmath::Tape<f32>;
pub type Tape64 = diffmath::Tape<f64>;
pub type Tensor32 = diffmath::Tensor<f32>;
pub type Tensor64 = diffmath::Tensor<f64>;
pub type ParamStore32 = diffmath::ParamStore<f32>;
pub type ParamStore64 = diffmath::ParamStore<f64>;
