use super::config::RunConfig;
use super::infer::{predict, SpotInstance};
use super::metrics::{eval_detection, eval_e2e, eval_line_protocol, Score};
use crate::data::{Dataset, GlyphSet};
use crate::diffmath::ParamStore;
use crate::error::Result;
use crate::geometry::{Point2, TextInstanceGT};
use crate::model::SpotterModel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Detection,
    E2e,
    Line,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub detection: Score,
    pub invalid_predictions: usize,
    pub none: Score,
    pub full: Score,
    pub line: Score,
}

/// Predictions for every sample, in parallel across images.
pub fn predict_dataset(
    model: &SpotterModel,
    params: &ParamStore<f32>,
    glyphs: &GlyphSet,
    ds: &Dataset,
    image_size: u32,
    threshold: f64,
    line_mode: bool,
) -> Result<Vec<Vec<SpotInstance>>> {
    ds.samples.par_iter().map(|s| predict(model, params, glyphs, &s.image, image_size, threshold, line_mode)).collect()
}

/// Ground truth in pixels of each sample's image.
pub fn gts_in_pixels(ds: &Dataset) -> Vec<Vec<TextInstanceGT>> {
    ds.samples
        .iter()
        .map(|s| {
            let (w, h) = (s.image.width() as f64, s.image.height() as f64);
            s.gts.iter().map(|g| g.map_points(|p| Point2::new(p.x * w, p.y * h))).collect()
        })
        .collect()
}

/// All protocols over pre-computed predictions.
pub fn summarize(preds: &[Vec<SpotInstance>], gts: &[Vec<TextInstanceGT>], lexicon: Option<&[String]>) -> Result<EvalSummary> {
    let det = eval_detection(preds, gts, 0.5)?;
    let e2e = eval_e2e(preds, gts, lexicon, 0.5)?;
    Ok(EvalSummary { detection: det.score, invalid_predictions: det.invalid_predictions, none: e2e.none, full: e2e.full, line: eval_line_protocol(preds, gts)? })
}

/// Predicts `ds` with the run's threshold and mode, then scores it. `ds`
/// must carry boundary points for the polygon-based protocols.
pub fn evaluate_dataset(
    model: &SpotterModel,
    params: &ParamStore<f32>,
    glyphs: &GlyphSet,
    ds: &Dataset,
    cfg: &RunConfig,
    lexicon: Option<&[String]>,
) -> Result<EvalSummary> {
    let preds = predict_dataset(model, params, glyphs, ds, cfg.data.image_size, cfg.threshold, cfg.line_mode)?;
    summarize(&preds, &gts_in_pixels(ds), lexicon)
}
