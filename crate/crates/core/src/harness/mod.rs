//! Training, inference, evaluation and overlays.

mod commands;
mod config;
mod evaluate;
mod infer;
mod metrics;
mod polygon;
mod sensitivity;
mod svg;
mod train;


pub use commands::{cmd_eval, cmd_infer};
pub use config::{DataConfig, RunConfig};
pub use evaluate::{evaluate_dataset, gts_in_pixels, predict_dataset, summarize, EvalSummary, Protocol};
pub use infer::{decode_layer, predict, ImageResult, SpotInstance, SpotResult};
pub use metrics::{eval_detection, eval_e2e, eval_line_protocol, levenshtein, nearest_word, DetectionReport, E2eReport, Pair, Score};
pub use polygon::{clip_convex, contains, intersection_area, is_simple, polygon_iou, polyline_midpoint, signed_area, triangulate};
pub use sensitivity::{cmd_line_sensitivity, perturbed_lines, SensitivityRow};
pub use svg::overlay_svg;
pub use train::{
    cmd_train, image_loss, load_model, load_training_data, run_training, targets_for, validation_data, CheckpointMeta, StepLog, TrainOutput,
    Trainer,
};
