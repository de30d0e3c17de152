use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("annotation error at record {record}, field `{field}`: {message}")]
    Annotation {
        record: usize,
        field: String,
        message: String,
    },
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("CTC label of length {label_len} needs {required} steps but only {steps} are available")]
    Infeasible {
        label_len: usize,
        required: usize,
        steps: usize,
    },
    #[error("matching error: {0}")]
    Matching(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at step {step} (batch seed {batch_seed}): {detail}")]
    Diverged {
        step: usize,
        batch_seed: u64,
        detail: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
