//! Synthetic scenes: glyph strings written along curved guide lines.

use super::glyphs::{GlyphSet, STENCIL_COLS, STENCIL_ROWS};
use crate::error::{Error, Result};
use crate::geometry::{gt_from_polygon, CubicBezier, Point2, TextInstanceGT};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub width: u32,
    pub height: u32,
    pub min_instances: usize,
    pub max_instances: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Glyph height range in pixels.
    pub glyph_height: (f64, f64),
    /// Guide direction range, degrees either side of horizontal.
    pub max_angle_deg: f64,
    /// Largest interior control-point offset, as a fraction of the guide
    /// length. Both interior points bend to the same side.
    pub max_bend: f64,
    /// Glyph advance as a multiple of glyph width.
    pub spacing: (f64, f64),
    /// Clearance kept to the canvas border and between instances, in pixels.
    pub margin: f64,
    pub contrast: (f64, f64),
    pub supersample: usize,
    /// Points per instance in the generated ground truth.
    pub n_points: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            min_instances: 1,
            max_instances: 3,
            min_len: 2,
            max_len: 4,
            glyph_height: (16.0, 22.0),
            max_angle_deg: 25.0,
            max_bend: 0.15,
            spacing: (1.2, 1.45),
            margin: 3.0,
            contrast: (0.55, 1.0),
            supersample: 3,
            n_points: 13,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return Err(Error::Config("need 1 ≤ min_instances ≤ max_instances".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("need 1 ≤ min_len ≤ max_len".into()));
        }
        if self.n_points < 2 || self.max_len + 2 > self.n_points {
            return Err(Error::Config(format!(
                "transcripts up to {} glyphs need at least {} points, got {}",
                self.max_len,
                self.max_len + 2,
                self.n_points
            )));
        }
        if self.supersample == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Config("canvas and supersampling must be non-empty".into()));
        }
        Ok(())
    }
}

/// One text string to draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    /// Guide curve in pixel coordinates, in reading order.
    pub guide: CubicBezier,
    pub text: String,
    pub glyph_height: f64,
    /// Fraction of each stencil cell that is inked.
    pub thickness: f64,
    pub ink: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub background: [u8; 3],
    pub instances: Vec<InstanceSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub image: RgbImage,
    pub gts: Vec<TextInstanceGT>,
    /// Ribbon polygons in pixels, top side then bottom side reversed.
    pub polygons: Vec<Vec<Point2>>,
    /// Glyphs drawn per instance.
    pub glyph_counts: Vec<usize>,
}

/// Arc-length lookup along a curve.
struct ArcTable {
    ts: Vec<f64>,
    lens: Vec<f64>,
}

impl ArcTable {
    fn new(c: &CubicBezier) -> Self {
        let m = 512;
        let ts: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
        let mut lens = vec![0.0];
        for w in ts.windows(2) {
            let d = c.at(w[0]).distance(c.at(w[1]));
            lens.push(lens.last().unwrap() + d);
        }
        Self { ts, lens }
    }

    fn total(&self) -> f64 {
        *self.lens.last().unwrap()
    }

    /// Parameter at arc distance `s`.
    fn param_at(&self, s: f64) -> f64 {
        let i = self.lens.partition_point(|&l| l < s).clamp(1, self.lens.len() - 1);
        let (l0, l1) = (self.lens[i - 1], self.lens[i]);
        let f = if l1 > l0 { (s - l0) / (l1 - l0) } else { 0.0 };
        self.ts[i - 1] + f * (self.ts[i] - self.ts[i - 1])
    }
}

fn unit(p: Point2) -> Point2 {
    let n = p.norm();
    if n > 0.0 {
        p * (1.0 / n)
    } else {
        Point2::new(1.0, 0.0)
    }
}

/// Normal pointing to the top side of text that runs along `tangent`
/// (y grows downwards).
fn top_normal(tangent: Point2) -> Point2 {
    let t = unit(tangent);
    Point2::new(t.y, -t.x)
}

/// Four vertices per side at `t = 0, 1/3, 2/3, 1`, offset by half the glyph height.
pub fn ribbon_polygon(guide: &CubicBezier, glyph_height: f64) -> Vec<Point2> {
    let half = glyph_height / 2.0;
    let ts = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    let top: Vec<Point2> = ts.iter().map(|&t| guide.at(t) + top_normal(guide.derivative(t)) * half).collect();
    let bot: Vec<Point2> = ts.iter().map(|&t| guide.at(t) - top_normal(guide.derivative(t)) * half).collect();
    top.into_iter().chain(bot.into_iter().rev()).collect()
}

fn bbox(points: &[Point2]) -> (f64, f64, f64, f64) {
    points.iter().fold((f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY), |(a, b, c, d), p| {
        (a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y))
    })
}

fn boxes_overlap(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64), margin: f64) -> bool {
    a.0 - margin < b.2 && b.0 - margin < a.2 && a.1 - margin < b.3 && b.1 - margin < a.3
}

/// Draws a random scene description; instance placement retries a bounded
/// number of times and stops early if the canvas is full.
pub fn random_scene(cfg: &GeneratorConfig, glyphs: &GlyphSet, seed: u64) -> Result<SceneSpec> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let bg_level = rng.gen_range(30.0..225.0);
    let background = [0, 1, 2].map(|_| (bg_level + rng.gen_range(-20.0..20.0f64)).clamp(0.0, 255.0) as u8);
    let count = rng.gen_range(cfg.min_instances..=cfg.max_instances);
    let mut instances: Vec<InstanceSpec> = Vec::new();
    let mut boxes = Vec::new();
    for _ in 0..count {
        let mut placed = false;
        for _attempt in 0..60 {
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let text: String = (0..len).map(|_| glyphs.chars()[rng.gen_range(0..glyphs.len())]).collect();
            let gh = rng.gen_range(cfg.glyph_height.0..=cfg.glyph_height.1);
            let gw = gh * STENCIL_COLS as f64 / STENCIL_ROWS as f64;
            let length = len as f64 * gw * rng.gen_range(cfg.spacing.0..=cfg.spacing.1);
            let angle = rng.gen_range(-cfg.max_angle_deg..=cfg.max_angle_deg).to_radians();
            let t = Point2::new(angle.cos(), angle.sin());
            let nrm = top_normal(t);
            let c = Point2::new(rng.gen_range(0.0..w), rng.gen_range(0.0..h));
            let p0 = c - t * (length / 2.0);
            let p3 = c + t * (length / 2.0);
            let bend = rng.gen_range(-cfg.max_bend..=cfg.max_bend) * length;
            let (b1, b2) = (bend * rng.gen_range(0.6..=1.0), bend * rng.gen_range(0.6..=1.0));
            let guide = CubicBezier::new(p0, p0 + t * (length / 3.0) + nrm * b1, p3 - t * (length / 3.0) + nrm * b2, p3);
            let poly = ribbon_polygon(&guide, gh);
            let bb = bbox(&poly);
            let m = cfg.margin;
            if bb.0 < m || bb.1 < m || bb.2 > w - m || bb.3 > h - m {
                continue;
            }
            if boxes.iter().any(|&o| boxes_overlap(bb, o, m)) {
                continue;
            }
            let contrast = rng.gen_range(cfg.contrast.0..=cfg.contrast.1);
            let dir = if bg_level > 127.5 { -1.0 } else { 1.0 };
            let ink = background.map(|b| (b as f64 + dir * contrast * 160.0 + rng.gen_range(-15.0..15.0)).clamp(0.0, 255.0) as u8);
            boxes.push(bb);
            instances.push(InstanceSpec { guide, text, glyph_height: gh, thickness: rng.gen_range(0.7..=1.0), ink });
            placed = true;
            break;
        }
        if !placed {
            break;
        }
    }
    if instances.is_empty() {
        return Err(Error::Config(format!("could not place any instance on a {}×{} canvas", cfg.width, cfg.height)));
    }
    Ok(SceneSpec { width: cfg.width, height: cfg.height, background, instances, seed })
}

/// Per-glyph placement: center, unit tangent, unit down-normal, cell size.
struct GlyphPose {
    class: usize,
    center: Point2,
    along: Point2,
    down: Point2,
    cell: f64,
}

fn glyph_poses(inst: &InstanceSpec, glyphs: &GlyphSet) -> Result<Vec<GlyphPose>> {
    let classes = glyphs.encode(&inst.text)?;
    let arc = ArcTable::new(&inst.guide);
    let step = arc.total() / classes.len() as f64;
    Ok(classes
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            let t = arc.param_at((i as f64 + 0.5) * step);
            let along = unit(inst.guide.derivative(t));
            GlyphPose { class, center: inst.guide.at(t), along, down: top_normal(along) * -1.0, cell: inst.glyph_height / STENCIL_ROWS as f64 }
        })
        .collect())
}

fn inked(poses: &[GlyphPose], glyphs: &GlyphSet, thickness: f64, p: Point2) -> bool {
    let (hw, hh) = (STENCIL_COLS as f64 / 2.0, STENCIL_ROWS as f64 / 2.0);
    for g in poses {
        let d = p - g.center;
        let u = d.dot(g.along) / g.cell + hw;
        let v = d.dot(g.down) / g.cell + hh;
        if u < 0.0 || v < 0.0 || u >= STENCIL_COLS as f64 || v >= STENCIL_ROWS as f64 {
            continue;
        }
        let (col, row) = (u.floor(), v.floor());
        // ink only the central `thickness` fraction of each cell
        let (fu, fv) = (u - col - 0.5, v - row - 0.5);
        if fu.abs() <= thickness / 2.0 && fv.abs() <= thickness / 2.0 && glyphs.ink(g.class, row as usize, col as usize) {
            return true;
        }
    }
    false
}

/// Rasterizes `spec` and derives one polygon ground truth per instance.
pub fn render_scene(spec: &SceneSpec, glyphs: &GlyphSet, n_points: usize, supersample: usize) -> Result<RenderedScene> {
    let (w, h) = (spec.width, spec.height);
    let mut image = RgbImage::from_pixel(w, h, Rgb(spec.background));
    let mut gts = Vec::new();
    let mut polygons = Vec::new();
    let mut glyph_counts = Vec::new();
    let ss = supersample.max(1);
    for inst in &spec.instances {
        let poses = glyph_poses(inst, glyphs)?;
        let poly = ribbon_polygon(&inst.guide, inst.glyph_height);
        let bb = bbox(&poly);
        let (x0, y0) = ((bb.0 - 2.0).floor().max(0.0) as u32, (bb.1 - 2.0).floor().max(0.0) as u32);
        let (x1, y1) = ((bb.2 + 2.0).ceil().min(w as f64) as u32, (bb.3 + 2.0).ceil().min(h as f64) as u32);
        for py in y0..y1 {
            for px in x0..x1 {
                let mut hits = 0;
                for sy in 0..ss {
                    for sx in 0..ss {
                        let p = Point2::new(px as f64 + (sx as f64 + 0.5) / ss as f64, py as f64 + (sy as f64 + 0.5) / ss as f64);
                        hits += inked(&poses, glyphs, inst.thickness, p) as usize;
                    }
                }
                if hits > 0 {
                    let a = hits as f64 / (ss * ss) as f64;
                    let px_ref = image.get_pixel_mut(px, py);
                    for c in 0..3 {
                        px_ref.0[c] = (px_ref.0[c] as f64 * (1.0 - a) + inst.ink[c] as f64 * a).round() as u8;
                    }
                }
            }
        }
        let norm: Vec<Point2> = poly.iter().map(|p| Point2::new(p.x / w as f64, p.y / h as f64)).collect();
        let gt = gt_from_polygon(&norm, &inst.text, n_points)?;
        gt.validate()?;
        gts.push(gt);
        polygons.push(poly);
        glyph_counts.push(poses.len());
    }
    Ok(RenderedScene { image, gts, polygons, glyph_counts })
}

/// Random scene plus its rendering.
pub fn generate_scene(cfg: &GeneratorConfig, glyphs: &GlyphSet, seed: u64) -> Result<(SceneSpec, RenderedScene)> {
    let spec = random_scene(cfg, glyphs, seed)?;
    let scene = render_scene(&spec, glyphs, cfg.n_points, cfg.supersample)?;
    Ok((spec, scene))
}
