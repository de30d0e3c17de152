use super::evaluate::{gts_in_pixels, predict_dataset, Protocol};
use super::infer::{predict, ImageResult, SpotResult};
use super::metrics::{eval_detection, eval_e2e, eval_line_protocol};
use super::svg::overlay_svg;
use super::train::load_model;
use crate::data::load_dataset;
use crate::error::{Error, Result};
use std::path::Path;

/// Spots text in every PNG of `images` (sorted by file name). Writes one
/// SVG overlay per image into `svg_out` when given.
pub fn cmd_infer(checkpoint: &Path, images: &Path, svg_out: Option<&Path>, threshold: f64) -> Result<SpotResult> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    let (model, params, meta) = load_model(checkpoint)?;
    let glyphs = crate::data::GlyphSet::with_size(meta.model.vocab_size)?;
    let mut files: Vec<_> = std::fs::read_dir(images)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if let Some(dir) = svg_out {
        std::fs::create_dir_all(dir)?;
    }
    let mut result = SpotResult::default();
    for path in files {
        let img = image::open(&path)?.to_rgb8();
        let instances = predict(&model, &params, &glyphs, &img, meta.image_size, threshold, meta.line_mode)?;
        let file = path.file_name().unwrap().to_string_lossy().into_owned();
        let r = ImageResult { file: file.clone(), width: img.width(), height: img.height(), instances };
        if let Some(dir) = svg_out {
            let href = path.canonicalize().ok().map(|p| p.display().to_string());
            std::fs::write(dir.join(format!("{}.svg", path.file_stem().unwrap().to_string_lossy())), overlay_svg(&r, href.as_deref()))?;
        }
        result.images.push(r);
    }
    Ok(result)
}

/// Scores a checkpoint on an annotation file under one protocol. The
/// lexicon file holds one word per line.
pub fn cmd_eval(checkpoint: &Path, data: &Path, protocol: Protocol, lexicon: Option<&Path>, threshold: f64) -> Result<serde_json::Value> {
    let (model, params, meta) = load_model(checkpoint)?;
    let glyphs = crate::data::GlyphSet::with_size(meta.model.vocab_size)?;
    let ds = load_dataset(data, &glyphs, meta.model.n)?;
    let words: Option<Vec<String>> = match lexicon {
        Some(p) => Some(std::fs::read_to_string(p)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()),
        None => None,
    };
    let preds = predict_dataset(&model, &params, &glyphs, &ds, meta.image_size, threshold, meta.line_mode)?;
    let gts = gts_in_pixels(&ds);
    Ok(match protocol {
        Protocol::Detection => serde_json::to_value(eval_detection(&preds, &gts, 0.5)?)?,
        Protocol::E2e => serde_json::to_value(eval_e2e(&preds, &gts, words.as_deref(), 0.5)?)?,
        Protocol::Line => serde_json::to_value(eval_line_protocol(&preds, &gts)?)?,
    })
}
