//! Synthetic data, annotation I/O, augmentation and batching.

mod annotations;
mod augment;
mod batch;
mod glyphs;
mod render;

#[cfg(test)]
mod tests;

pub use annotations::{
    export_dataset, gt_to_record, load_dataset, parse_annotations, record_to_gts, AnnotationFile, Dataset, ImageRecord, InstanceKind,
    InstanceRecord, Sample,
};
pub use augment::{augment, instance_crop, jitter, resize, rotate, rotate_point, AugmentPolicy};
pub use batch::{batch_samples, epoch_order, fit_to, image_to_tensor, make_batch, normalize_pixel, Batch};
pub use glyphs::{hamming, GlyphSet, MIN_HAMMING, STENCIL_COLS, STENCIL_ROWS};
pub use render::{generate_scene, random_scene, render_scene, ribbon_polygon, GeneratorConfig, InstanceSpec, RenderedScene, SceneSpec};

use crate::error::Result;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Per-scene seeds of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub base_seed: u64,
    pub scenes: Vec<(String, u64)>,
}

/// Seed of scene `index` under `base_seed`.
pub fn scene_seed(base_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index as u64 + 1);
    rng.next_u64()
}

/// `count` scenes drawn from `cfg`, reproducible from `base_seed`.
pub fn generate_dataset(cfg: &GeneratorConfig, glyphs: &GlyphSet, count: usize, base_seed: u64) -> Result<(Dataset, SeedManifest)> {
    let mut samples = Vec::with_capacity(count);
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let seed = scene_seed(base_seed, i);
        let (_, scene) = generate_scene(cfg, glyphs, seed)?;
        let name = format!("scene_{i:05}.png");
        samples.push(Sample { name: name.clone(), image: scene.image, gts: scene.gts });
        scenes.push((name, seed));
    }
    Ok((Dataset { samples }, SeedManifest { base_seed, scenes }))
}

/// Generates a dataset and writes images, `annotations.json` and `seeds.json`.
pub fn write_generated(cfg: &GeneratorConfig, glyphs: &GlyphSet, count: usize, base_seed: u64, dir: &Path) -> Result<Dataset> {
    let (ds, manifest) = generate_dataset(cfg, glyphs, count, base_seed)?;
    export_dataset(&ds, dir)?;
    std::fs::write(dir.join("seeds.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(ds)
}
