use crate::assignment::LossConfig;
use crate::data::{AugmentPolicy, GeneratorConfig, GlyphSet};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Where training images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Annotation file; when absent, scenes are generated.
    pub annotations: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub train_scenes: usize,
    pub train_seed: u64,
    pub val_scenes: usize,
    pub val_seed: u64,
    /// Longer image side fed to the model.
    pub image_size: u32,
    pub batch_size: usize,
    pub augment: AugmentPolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            annotations: None,
            generator: GeneratorConfig::default(),
            train_scenes: 32,
            train_seed: 1,
            val_scenes: 16,
            val_seed: 2,
            image_size: 128,
            batch_size: 1,
            augment: AugmentPolicy::none(),
        }
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub data: DataConfig,
    pub seed: u64,
    pub iterations: usize,
    pub lr: f64,
    /// Learning-rate multiplier for the convolutional stem.
    pub stem_lr_mult: f64,
    pub weight_decay: f64,
    pub warmup: usize,
    /// Step after which the learning rate drops by `lr_drop_factor`.
    pub lr_drop_step: Option<usize>,
    pub lr_drop_factor: f64,
    pub grad_clip: Option<f64>,
    pub checkpoint_every: usize,
    /// Training-set evaluation cadence; 0 disables it.
    pub eval_every: usize,
    pub threshold: f64,
    /// Train on center lines only, without the boundary head.
    pub line_mode: bool,
    pub out_dir: PathBuf,
    /// Starting weights for fine-tuning.
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            data: DataConfig::default(),
            seed: 0,
            iterations: 1000,
            lr: 1e-4,
            stem_lr_mult: 0.1,
            weight_decay: 1e-4,
            warmup: 0,
            lr_drop_step: None,
            lr_drop_factor: 0.1,
            grad_clip: Some(0.1),
            checkpoint_every: 0,
            eval_every: 0,
            threshold: 0.4,
            line_mode: false,
            out_dir: PathBuf::from("runs/default"),
            init_checkpoint: None,
        }
    }
}

impl RunConfig {
    /// The desk-scale setting: toy model on 32 generated 128 px scenes.
    pub fn toy() -> Self {
        let model = ModelConfig::toy();
        let mut data = DataConfig::default();
        data.generator.n_points = model.n;
        Self {
            model,
            data,
            iterations: 2000,
            lr: 1e-3,
            stem_lr_mult: 1.0,
            warmup: 50,
            lr_drop_step: Some(1600),
            grad_clip: Some(1.0),
            out_dir: PathBuf::from("runs/toy"),
            ..Self::default()
        }
    }

    pub fn glyphs(&self) -> Result<GlyphSet> {
        GlyphSet::with_size(self.model.vocab_size)
    }

    /// Loss settings after line mode has removed the boundary term.
    pub fn effective_loss(&self) -> LossConfig {
        let mut l = self.loss.clone();
        if self.line_mode {
            l.lambda_bd = 0.0;
        }
        l
    }

    /// Learning rate at optimizer step `step` (0-based), before per-parameter scaling.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = if self.warmup > 0 && step < self.warmup { (step + 1) as f64 / self.warmup as f64 } else { 1.0 };
        let drop = match self.lr_drop_step {
            Some(s) if step >= s => self.lr_drop_factor,
            _ => 1.0,
        };
        self.lr * warm * drop
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.data.generator.validate()?;
        self.data.augment.validate()?;
        if let Some(p) = &self.data.annotations {
            if !p.exists() {
                return Err(Error::Config(format!("annotation file {} does not exist", p.display())));
            }
        }
        if let Some(p) = &self.init_checkpoint {
            if !p.exists() {
                return Err(Error::Config(format!("checkpoint {} does not exist", p.display())));
            }
        }
        if self.data.generator.n_points != self.model.n {
            return Err(Error::Config(format!(
                "generator emits {} points per instance but the model uses N = {}",
                self.data.generator.n_points, self.model.n
            )));
        }
        if self.data.generator.max_instances > self.model.k {
            return Err(Error::Config(format!("scenes may hold {} instances but K = {}", self.data.generator.max_instances, self.model.k)));
        }
        if self.data.batch_size == 0 || self.data.image_size == 0 {
            return Err(Error::Config("batch size and image size must be positive".into()));
        }
        if self.data.annotations.is_none() && self.data.train_scenes == 0 {
            return Err(Error::Config("no training scenes".into()));
        }
        if !(self.lr > 0.0) || !(self.stem_lr_mult >= 0.0) || !(self.lr_drop_factor > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        Ok(cfg)
    }
}
