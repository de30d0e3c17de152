//! Training-time image and annotation transforms.

use crate::error::{Error, Result};
use crate::geometry::{Point2, TextInstanceGT};
use image::{imageops, Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    /// Uniform rotation in `[-d, d]` degrees.
    pub rotate_deg: Option<f64>,
    /// Instance-aware crop keeping at least this fraction of each side.
    pub crop_min: Option<f64>,
    /// Uniform rescale factor range.
    pub resize: Option<(f64, f64)>,
    /// Brightness and contrast jitter strength.
    pub jitter: Option<f64>,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { rotate_deg: Some(45.0), crop_min: Some(0.7), resize: Some((0.8, 1.2)), jitter: Some(0.2) }
    }
}

impl AugmentPolicy {
    pub fn none() -> Self {
        Self { rotate_deg: None, crop_min: None, resize: None, jitter: None }
    }

    /// Line annotations carry no boundary, so crops are disabled.
    pub fn for_lines(&self) -> Self {
        Self { crop_min: None, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.crop_min {
            if !(0.0 < c && c <= 1.0) {
                return Err(Error::Config(format!("crop_min must lie in (0, 1], got {c}")));
            }
        }
        if let Some((a, b)) = self.resize {
            if !(0.0 < a && a <= b) {
                return Err(Error::Config(format!("resize range must satisfy 0 < min ≤ max, got ({a}, {b})")));
            }
        }
        Ok(())
    }
}

/// Rotates a normalized point by `deg` about the center of a `w × h` canvas
/// and renormalizes it to the enclosing `w' × h'` canvas.
pub fn rotate_point(p: Point2, deg: f64, w: f64, h: f64) -> Point2 {
    let (nw, nh) = rotated_extent(w, h, deg);
    let (s, c) = deg.to_radians().sin_cos();
    let (dx, dy) = (p.x * w - w / 2.0, p.y * h - h / 2.0);
    Point2::new((c * dx - s * dy + nw / 2.0) / nw, (s * dx + c * dy + nh / 2.0) / nh)
}

fn rotated_extent(w: f64, h: f64, deg: f64) -> (f64, f64) {
    let (s, c) = deg.to_radians().sin_cos();
    let nw = (w * c.abs() + h * s.abs()).round().max(1.0);
    let nh = (w * s.abs() + h * c.abs()).round().max(1.0);
    (nw, nh)
}

fn border_mean(img: &RgbImage) -> Rgb<u8> {
    let (w, h) = img.dimensions();
    let mut acc = [0.0f64; 3];
    let mut count = 0.0f64;
    for (x, y, p) in img.enumerate_pixels() {
        if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
            for c in 0..3 {
                acc[c] += p.0[c] as f64;
            }
            count += 1.0;
        }
    }
    Rgb(acc.map(|v| (v / count.max(1.0)).round() as u8))
}

fn bilinear(img: &RgbImage, x: f64, y: f64, fill: Rgb<u8>) -> Rgb<u8> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (x, y) = (x - 0.5, y - 0.5);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let fetch = |xi: i64, yi: i64| -> [f64; 3] {
        if xi < 0 || yi < 0 || xi >= w || yi >= h {
            fill.0.map(|v| v as f64)
        } else {
            img.get_pixel(xi as u32, yi as u32).0.map(|v| v as f64)
        }
    };
    let (xi, yi) = (x0 as i64, y0 as i64);
    let (a, b, c, d) = (fetch(xi, yi), fetch(xi + 1, yi), fetch(xi, yi + 1), fetch(xi + 1, yi + 1));
    let mut out = [0u8; 3];
    for k in 0..3 {
        let top = a[k] * (1.0 - fx) + b[k] * fx;
        let bot = c[k] * (1.0 - fx) + d[k] * fx;
        out[k] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Rotation onto an enlarged canvas that contains the whole rotated image.
pub fn rotate(img: &RgbImage, gts: &[TextInstanceGT], deg: f64) -> (RgbImage, Vec<TextInstanceGT>) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let (nw, nh) = rotated_extent(w, h, deg);
    let (s, c) = deg.to_radians().sin_cos();
    let fill = border_mean(img);
    let out = RgbImage::from_fn(nw as u32, nh as u32, |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - nw / 2.0, y as f64 + 0.5 - nh / 2.0);
        // inverse rotation
        bilinear(img, c * dx + s * dy + w / 2.0, -s * dx + c * dy + h / 2.0, fill)
    });
    let gts = gts.iter().map(|g| g.map_points(|p| rotate_point(p, deg, w, h))).collect();
    (out, gts)
}

fn instance_bbox(g: &TextInstanceGT) -> (f64, f64, f64, f64) {
    let pts = g.center.iter().chain(g.top.iter().flatten()).chain(g.bot.iter().flatten());
    pts.fold((f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY), |(a, b, c, d), p| {
        (a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y))
    })
}

/// Random crop that never cuts an instance: every instance ends up fully
/// inside (kept) or fully outside (dropped), and at least one is kept.
/// Returns `None` when no such crop is found.
pub fn instance_crop<R: Rng>(img: &RgbImage, gts: &[TextInstanceGT], min_frac: f64, rng: &mut R) -> Option<(RgbImage, Vec<TextInstanceGT>)> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let boxes: Vec<_> = gts.iter().map(instance_bbox).collect();
    for _ in 0..30 {
        let cw = (rng.gen_range(min_frac..=1.0) * w).round().max(1.0);
        let ch = (rng.gen_range(min_frac..=1.0) * h).round().max(1.0);
        let x0 = rng.gen_range(0.0..=(w - cw)).floor();
        let y0 = rng.gen_range(0.0..=(h - ch)).floor();
        let (nx0, ny0, nx1, ny1) = (x0 / w, y0 / h, (x0 + cw) / w, (y0 + ch) / h);
        let mut keep = Vec::new();
        let mut ok = true;
        for (i, b) in boxes.iter().enumerate() {
            let inside = b.0 >= nx0 && b.1 >= ny0 && b.2 <= nx1 && b.3 <= ny1;
            let outside = b.2 <= nx0 || b.0 >= nx1 || b.3 <= ny0 || b.1 >= ny1;
            if inside {
                keep.push(i);
            } else if !outside {
                ok = false;
                break;
            }
        }
        if !ok || keep.is_empty() {
            continue;
        }
        let out = imageops::crop_imm(img, x0 as u32, y0 as u32, cw as u32, ch as u32).to_image();
        let gts = keep
            .iter()
            .map(|&i| gts[i].map_points(|p| Point2::new((p.x * w - x0) / cw, (p.y * h - y0) / ch)))
            .collect();
        return Some((out, gts));
    }
    None
}

/// Uniform rescale; normalized coordinates are unchanged.
pub fn resize(img: &RgbImage, factor: f64) -> RgbImage {
    let nw = ((img.width() as f64 * factor).round() as u32).max(1);
    let nh = ((img.height() as f64 * factor).round() as u32).max(1);
    imageops::resize(img, nw, nh, imageops::FilterType::Triangle)
}

pub fn jitter<R: Rng>(img: &RgbImage, strength: f64, rng: &mut R) -> RgbImage {
    let contrast = 1.0 + rng.gen_range(-strength..=strength);
    let bright = rng.gen_range(-strength..=strength) * 128.0;
    let tint: [f64; 3] = [0, 1, 2].map(|_| rng.gen_range(-strength..=strength) * 32.0);
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            p.0[c] = ((p.0[c] as f64 - 128.0) * contrast + 128.0 + bright + tint[c]).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Applies the enabled transforms in the order rotate, crop, resize, jitter.
pub fn augment<R: Rng>(img: &RgbImage, gts: &[TextInstanceGT], policy: &AugmentPolicy, rng: &mut R) -> Result<(RgbImage, Vec<TextInstanceGT>)> {
    policy.validate()?;
    let (mut img, mut gts) = (img.clone(), gts.to_vec());
    if let Some(d) = policy.rotate_deg {
        let deg = rng.gen_range(-d..=d);
        (img, gts) = rotate(&img, &gts, deg);
    }
    if let Some(f) = policy.crop_min {
        if let Some(c) = instance_crop(&img, &gts, f, rng) {
            (img, gts) = c;
        }
    }
    if let Some((a, b)) = policy.resize {
        img = resize(&img, rng.gen_range(a..=b));
    }
    if let Some(s) = policy.jitter {
        img = jitter(&img, s, rng);
    }
    Ok((img, gts))
}
