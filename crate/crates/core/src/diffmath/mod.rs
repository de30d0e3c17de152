//! Minimal reverse-mode differentiation over dense row-major tensors.

mod checkpoint;
mod gradcheck;
mod linalg;
mod nn;
mod ops;
mod optim;
mod params;
mod sample;
mod tape;
mod tensor;

pub use checkpoint::{load_into, manifest_path, read_manifest, save, Manifest, ManifestEntry};
pub use gradcheck::{grad_check, grad_check_many, relative_error, GradCheckReport};
pub use nn::{log_sum_exp, softmax_in_place};
pub use ops::{logit, sigmoid};
pub use optim::{clip_grad_norm, AdamW, AdamWConfig};
pub use params::{param, ParamId, ParamStore};
pub use sample::LevelLayout;
pub use tape::{BackwardCtx, Grads, Tape, Var};
pub use tensor::{numel, Tensor};

#[cfg(test)]
mod tests;
