use crate::assignment::ctc_greedy_decode;
use crate::data::{fit_to, image_to_tensor, GlyphSet};
use crate::diffmath::{sigmoid, ParamStore, Tape};
use crate::error::Result;
use crate::geometry::{polygon_from_boundary, Point2};
use crate::model::{LayerPrediction, SpotterModel};
use crate::scalar::Scalar;
use super::polygon::is_simple;
use image::RgbImage;
use serde::{Deserialize, Serialize};

/// One spotted instance, in pixels of the original image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotInstance {
    /// Top side followed by the reversed bottom side; absent in line mode.
    pub polygon: Option<Vec<Point2>>,
    /// False when the polygon is missing or self-intersecting.
    pub valid_polygon: bool,
    pub center: Vec<Point2>,
    pub transcript: String,
    /// Mean of the `N` point probabilities.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub file: String,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<SpotInstance>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpotResult {
    pub images: Vec<ImageResult>,
}

/// Reads out every query of `layer` whose confidence reaches `threshold`.
/// `to_px` maps normalized canvas coordinates to output coordinates.
pub fn decode_layer<T: Scalar>(
    tape: &Tape<T>,
    layer: &LayerPrediction,
    glyphs: &GlyphSet,
    threshold: f64,
    line_mode: bool,
    to_px: impl Fn(Point2) -> Point2,
) -> Vec<SpotInstance> {
    let f = |v: &[T]| -> Vec<f64> { v.iter().map(|x| x.to_f64().unwrap()).collect() };
    let shape = tape.shape(layer.char_logits).to_vec();
    let (k, n, c) = (shape[0], shape[1], shape[2]);
    let logits = f(tape.value(layer.instance_logits));
    let chars = f(tape.value(layer.char_logits));
    let (center, top, bot) = (f(tape.value(layer.center)), f(tape.value(layer.top)), f(tape.value(layer.bot)));
    let points = |buf: &[f64], q: usize| -> Vec<Point2> { (0..n).map(|i| to_px(Point2::new(buf[(q * n + i) * 2], buf[(q * n + i) * 2 + 1]))).collect() };
    let mut out = Vec::new();
    for q in 0..k {
        let confidence = logits[q * n..(q + 1) * n].iter().map(|&z| sigmoid(z)).sum::<f64>() / n as f64;
        if confidence < threshold {
            continue;
        }
        let label = ctc_greedy_decode(&chars[q * n * c..(q + 1) * n * c], n, c);
        let polygon = if line_mode { None } else { polygon_from_boundary(&points(&top, q), &points(&bot, q)).ok() };
        let valid_polygon = polygon.as_deref().is_some_and(is_simple);
        out.push(SpotInstance { polygon, valid_polygon, center: points(&center, q), transcript: glyphs.decode(&label), confidence });
    }
    out
}

/// Runs the model on one image resized to longer side `image_size`.
pub fn predict<T: Scalar>(
    model: &SpotterModel,
    params: &ParamStore<T>,
    glyphs: &GlyphSet,
    image: &RgbImage,
    image_size: u32,
    threshold: f64,
    line_mode: bool,
) -> Result<Vec<SpotInstance>> {
    let resized = fit_to(image, image_size);
    let stride = model.cfg.coarsest_stride();
    let (rw, rh) = (resized.width() as usize, resized.height() as usize);
    let (wp, hp) = (rw.div_ceil(stride) * stride, rh.div_ceil(stride) * stride);
    let tensor = image_to_tensor::<T>(&resized, hp, wp);
    let mut tape = Tape::new();
    params.bind(&mut tape)?;
    let out = model.forward(&mut tape, &tensor, Some((rh, rw)))?;
    let last = out.layers.last().expect("at least one decoder layer");
    let (sx, sy) = (wp as f64 * image.width() as f64 / rw as f64, hp as f64 * image.height() as f64 / rh as f64);
    Ok(decode_layer(&tape, last, glyphs, threshold, line_mode, |p| Point2::new(p.x * sx, p.y * sy)))
}
