//! Batching: resize to a common scale, pad, and normalize.

use super::annotations::{Dataset, Sample};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{Point2, TextInstanceGT};
use crate::scalar::Scalar;
use image::{imageops, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Padded images with their valid extents and ground truth renormalized to
/// the padded canvas.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// Each `[H, W, 3]`, all the same size.
    pub images: Vec<Tensor<T>>,
    /// Valid `(height, width)` inside the padded canvas.
    pub valid: Vec<(usize, usize)>,
    pub gts: Vec<Vec<TextInstanceGT>>,
    pub names: Vec<String>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Maps pixel values to `[-1, 1]`.
pub fn normalize_pixel<T: Scalar>(v: u8) -> T {
    T::lit((v as f64 / 255.0 - 0.5) * 2.0)
}

/// Writes `img` into the top-left corner of a zero `[h, w, 3]` tensor.
pub fn image_to_tensor<T: Scalar>(img: &RgbImage, h: usize, w: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[h, w, 3]);
    for (x, y, p) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        if x < w && y < h {
            for c in 0..3 {
                t.data[(y * w + x) * 3 + c] = normalize_pixel(p.0[c]);
            }
        }
    }
    t
}

/// Scales `img` so its longer side equals `target`.
pub fn fit_to(img: &RgbImage, target: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let s = target as f64 / w.max(h) as f64;
    let (nw, nh) = (((w as f64 * s).round() as u32).max(1), ((h as f64 * s).round() as u32).max(1));
    if (nw, nh) == (w, h) {
        img.clone()
    } else {
        imageops::resize(img, nw, nh, imageops::FilterType::Triangle)
    }
}

/// Batch of `dataset.samples[indices]`; see [`batch_samples`].
pub fn make_batch<T: Scalar>(dataset: &Dataset, indices: &[usize], target: u32, multiple: usize) -> Result<Batch<T>> {
    let samples = indices
        .iter()
        .map(|&i| {
            dataset.samples.get(i).cloned().ok_or_else(|| Error::Config(format!("sample index {i} out of range for {} samples", dataset.len())))
        })
        .collect::<Result<Vec<_>>>()?;
    batch_samples(&samples, target, multiple)
}

/// Resizes every sample to longer side `target`, pads to the largest extent
/// in the batch rounded up to `multiple`, and rescales ground truth to the
/// padded canvas.
pub fn batch_samples<T: Scalar>(samples: &[Sample], target: u32, multiple: usize) -> Result<Batch<T>> {
    if samples.is_empty() || target == 0 || multiple == 0 {
        return Err(Error::Config("a batch needs at least one sample and a positive size".into()));
    }
    let resized: Vec<RgbImage> = samples.iter().map(|s| fit_to(&s.image, target)).collect();
    let h = (resized.iter().map(|i| i.height()).max().unwrap() as usize).div_ceil(multiple) * multiple;
    let w = (resized.iter().map(|i| i.width()).max().unwrap() as usize).div_ceil(multiple) * multiple;
    let mut batch = Batch { images: Vec::new(), valid: Vec::new(), gts: Vec::new(), names: Vec::new() };
    for (s, img) in samples.iter().zip(&resized) {
        let (iw, ih) = (img.width() as f64, img.height() as f64);
        let (sx, sy) = (iw / w as f64, ih / h as f64);
        batch.images.push(image_to_tensor(img, h, w));
        batch.valid.push((img.height() as usize, img.width() as usize));
        batch.gts.push(s.gts.iter().map(|g| g.map_points(|p| Point2::new(p.x * sx, p.y * sy))).collect());
        batch.names.push(s.name.clone());
    }
    Ok(batch)
}

/// Sample order for one epoch, fixed by `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    idx.shuffle(&mut rng);
    idx
}
