//! Annotation files: JSON records plus PNG images.
//!
//! ```json
//! {"images": [{"file": "scene_0000.png", "width": 128, "height": 128,
//!   "instances": [{"kind": "polygon", "points": [[x, y], ...], "transcript": "A1"}]}]}
//! ```
//!
//! Points are absolute pixels. `polygon` lists the top side in reading order
//! followed by the bottom side reversed. `bezier_pair` lists the four top
//! control points in reading order followed by the four bottom control
//! points reversed. `line` lists points along the center line in reading order.

use super::glyphs::GlyphSet;
use crate::error::{Error, Result};
use crate::geometry::{gt_from_line, gt_from_polygon, gt_from_sides, CubicBezier, Point2, TextInstanceGT};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Polygon,
    BezierPair,
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub kind: InstanceKind,
    pub points: Vec<[f64; 2]>,
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub file: String,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<InstanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub images: Vec<ImageRecord>,
}

/// One loaded image with normalized ground truth.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub image: RgbImage,
    pub gts: Vec<TextInstanceGT>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// All boundary points dropped, as with line-only annotation.
    pub fn to_lines(&self) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| Sample { gts: s.gts.iter().map(TextInstanceGT::without_boundary).collect(), ..s.clone() })
                .collect(),
        }
    }
}

fn field_err(record: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Annotation { record, field: field.into(), message: message.into() }
}

fn get<'a>(v: &'a Value, record: usize, field: &str) -> Result<&'a Value> {
    v.get(field).ok_or_else(|| field_err(record, field, "missing"))
}

fn as_u32(v: &Value, record: usize, field: &str) -> Result<u32> {
    v.as_u64()
        .filter(|&x| x > 0 && x <= u32::MAX as u64)
        .map(|x| x as u32)
        .ok_or_else(|| field_err(record, field, format!("expected a positive integer, got {v}")))
}

/// Parses and structurally validates an annotation document. Errors name the
/// image record index and the offending field.
pub fn parse_annotations(text: &str) -> Result<AnnotationFile> {
    let root: Value = serde_json::from_str(text)?;
    let images = root
        .get("images")
        .and_then(Value::as_array)
        .ok_or_else(|| field_err(0, "images", "expected a top-level `images` array"))?;
    let mut out = Vec::with_capacity(images.len());
    for (r, img) in images.iter().enumerate() {
        let file = get(img, r, "file")?.as_str().ok_or_else(|| field_err(r, "file", "expected a string"))?.to_string();
        let width = as_u32(get(img, r, "width")?, r, "width")?;
        let height = as_u32(get(img, r, "height")?, r, "height")?;
        let insts = get(img, r, "instances")?.as_array().ok_or_else(|| field_err(r, "instances", "expected an array"))?;
        let mut instances = Vec::with_capacity(insts.len());
        for (j, inst) in insts.iter().enumerate() {
            let f = |name: &str| format!("instances[{j}].{name}");
            let kind_v = inst.get("kind").ok_or_else(|| field_err(r, f("kind"), "missing"))?;
            let kind: InstanceKind = serde_json::from_value(kind_v.clone())
                .map_err(|_| field_err(r, f("kind"), format!("expected polygon, bezier_pair or line, got {kind_v}")))?;
            let pts_v = inst.get("points").and_then(Value::as_array).ok_or_else(|| field_err(r, f("points"), "expected an array"))?;
            let mut points = Vec::with_capacity(pts_v.len());
            for (k, p) in pts_v.iter().enumerate() {
                let xy = p
                    .as_array()
                    .filter(|a| a.len() == 2)
                    .and_then(|a| Some([a[0].as_f64()?, a[1].as_f64()?]))
                    .filter(|xy| xy.iter().all(|v| v.is_finite()))
                    .ok_or_else(|| field_err(r, f(&format!("points[{k}]")), format!("expected a finite [x, y] pair, got {p}")))?;
                points.push(xy);
            }
            let ok = match kind {
                InstanceKind::Polygon => points.len() >= 4 && points.len() % 2 == 0,
                InstanceKind::BezierPair => points.len() == 8,
                InstanceKind::Line => points.len() >= 2,
            };
            if !ok {
                return Err(field_err(r, f("points"), format!("{} points do not fit kind {kind:?}", points.len())));
            }
            let transcript = inst
                .get("transcript")
                .and_then(Value::as_str)
                .ok_or_else(|| field_err(r, f("transcript"), "expected a string"))?
                .to_string();
            instances.push(InstanceRecord { kind, points, transcript });
        }
        out.push(ImageRecord { file, width, height, instances });
    }
    Ok(AnnotationFile { images: out })
}

/// Normalized ground truth for one image record.
pub fn record_to_gts(rec: &ImageRecord, record: usize, glyphs: &GlyphSet, n_points: usize, max_len: usize) -> Result<Vec<TextInstanceGT>> {
    let (w, h) = (rec.width as f64, rec.height as f64);
    rec.instances
        .iter()
        .enumerate()
        .map(|(j, inst)| {
            if let Some(c) = inst.transcript.chars().find(|&c| glyphs.class_of(c).is_none()) {
                return Err(field_err(record, format!("instances[{j}].transcript"), format!("character {c:?} is not in the vocabulary")));
            }
            let len = inst.transcript.chars().count();
            if len == 0 || len > max_len {
                return Err(field_err(record, format!("instances[{j}].transcript"), format!("length {len} is outside 1..={max_len}")));
            }
            let pts: Vec<Point2> = inst.points.iter().map(|p| Point2::new(p[0] / w, p[1] / h)).collect();
            let gt = match inst.kind {
                InstanceKind::Polygon => gt_from_polygon(&pts, &inst.transcript, n_points),
                InstanceKind::BezierPair => {
                    let top = CubicBezier::new(pts[0], pts[1], pts[2], pts[3]);
                    let bot = CubicBezier::new(pts[7], pts[6], pts[5], pts[4]);
                    gt_from_sides(&top, &bot, &inst.transcript, n_points)
                }
                InstanceKind::Line => gt_from_line(&pts, &inst.transcript, n_points),
            };
            gt.map_err(|e| field_err(record, format!("instances[{j}].points"), e.to_string()))
        })
        .collect()
}

/// Loads an annotation file; image paths are relative to its directory.
/// Transcripts longer than `n_points - 2` are rejected.
pub fn load_dataset(path: &Path, glyphs: &GlyphSet, n_points: usize) -> Result<Dataset> {
    let file = parse_annotations(&std::fs::read_to_string(path)?)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let max_len = n_points.saturating_sub(2);
    let mut samples = Vec::with_capacity(file.images.len());
    for (r, rec) in file.images.iter().enumerate() {
        let gts = record_to_gts(rec, r, glyphs, n_points, max_len)?;
        let image = image::open(root.join(&rec.file))?.to_rgb8();
        if image.dimensions() != (rec.width, rec.height) {
            return Err(field_err(r, "width", format!("record says {}×{}, image is {}×{}", rec.width, rec.height, image.width(), image.height())));
        }
        samples.push(Sample { name: rec.file.clone(), image, gts });
    }
    Ok(Dataset { samples })
}

fn to_px(points: &[Point2], w: f64, h: f64) -> Vec<[f64; 2]> {
    points.iter().map(|p| [p.x * w, p.y * h]).collect()
}

/// Record for one ground truth: a polygon when boundary points exist, a
/// center line otherwise.
pub fn gt_to_record(gt: &TextInstanceGT, w: u32, h: u32) -> InstanceRecord {
    let (w, h) = (w as f64, h as f64);
    match gt.polygon() {
        Some(poly) => InstanceRecord { kind: InstanceKind::Polygon, points: to_px(&poly, w, h), transcript: gt.transcript.clone() },
        None => InstanceRecord { kind: InstanceKind::Line, points: to_px(&gt.center, w, h), transcript: gt.transcript.clone() },
    }
}

/// Writes `annotations.json` and one PNG per sample into `dir`.
pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<AnnotationFile> {
    std::fs::create_dir_all(dir)?;
    let mut file = AnnotationFile::default();
    for s in &dataset.samples {
        s.image.save(dir.join(&s.name))?;
        let (w, h) = s.image.dimensions();
        file.images.push(ImageRecord {
            file: s.name.clone(),
            width: w,
            height: h,
            instances: s.gts.iter().map(|g| gt_to_record(g, w, h)).collect(),
        });
    }
    std::fs::write(dir.join("annotations.json"), serde_json::to_string_pretty(&file)?)?;
    Ok(file)
}
