use super::config::RunConfig;
use super::evaluate::{evaluate_dataset, EvalSummary};
use crate::assignment::{loss_decoder, loss_encoder, match_layer, total_loss, LossBreakdown, LossConfig, Target};
use crate::data::{augment, batch_samples, epoch_order, generate_dataset, load_dataset, scene_seed, Dataset, GlyphSet, Sample};
use crate::diffmath::{clip_grad_norm, AdamW, AdamWConfig, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::TextInstanceGT;
use crate::model::{LayerPrediction, ModelConfig, SpotterModel};
use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

pub fn targets_for(gts: &[TextInstanceGT], glyphs: &GlyphSet) -> Result<Vec<Target>> {
    gts.iter().map(|g| Ok(Target::new(g, glyphs.encode(&g.transcript)?))).collect()
}

/// Loss of one image, divided by its number of instances (at least one).
pub fn image_loss<T: Scalar>(
    model: &SpotterModel,
    tape: &mut Tape<T>,
    image: &Tensor<T>,
    valid: (usize, usize),
    targets: &[Target],
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    let out = model.forward(tape, image, Some(valid))?;
    let layers: Vec<LayerPrediction> = cfg.supervised_layers(out.layers.len()).iter().map(|&i| out.layers[i]).collect();
    let matches = layers.iter().map(|l| match_layer(tape, targets, l, cfg)).collect::<Result<Vec<_>>>()?;
    let dec = loss_decoder(tape, targets, &layers, &matches, cfg)?;
    let enc = loss_encoder(tape, targets, &out.encoder, cfg)?;
    let (total, parts) = total_loss(tape, &dec, &enc)?;
    let g = targets.len().max(1) as f64;
    let total = tape.scale(total, T::lit(1.0 / g));
    Ok((total, scale_breakdown(parts, 1.0 / g)))
}

fn scale_breakdown(b: LossBreakdown, s: f64) -> LossBreakdown {
    LossBreakdown {
        l_cls: b.l_cls * s,
        l_text: b.l_text * s,
        l_coord: b.l_coord * s,
        l_bd: b.l_bd * s,
        l_enc: b.l_enc * s,
        total: b.total * s,
    }
}

fn add_breakdown(a: LossBreakdown, b: LossBreakdown) -> LossBreakdown {
    LossBreakdown {
        l_cls: a.l_cls + b.l_cls,
        l_text: a.l_text + b.l_text,
        l_coord: a.l_coord + b.l_coord,
        l_bd: a.l_bd + b.l_bd,
        l_enc: a.l_enc + b.l_enc,
        total: a.total + b.total,
    }
}

fn is_finite(b: &LossBreakdown) -> bool {
    [b.l_cls, b.l_text, b.l_coord, b.l_bd, b.l_enc, b.total].iter().all(|v| v.is_finite())
}

/// One metrics-log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Metadata stored alongside checkpoint weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub line_mode: bool,
    pub image_size: u32,
}

/// Training or evaluation images for `cfg`: the annotation file when given,
/// generated scenes otherwise. Line mode strips boundaries.
pub fn load_training_data(cfg: &RunConfig, glyphs: &GlyphSet) -> Result<Dataset> {
    let ds = match &cfg.data.annotations {
        Some(p) => load_dataset(p, glyphs, cfg.model.n)?,
        None => generate_dataset(&cfg.data.generator, glyphs, cfg.data.train_scenes, cfg.data.train_seed)?.0,
    };
    Ok(if cfg.line_mode { ds.to_lines() } else { ds })
}

pub fn validation_data(cfg: &RunConfig, glyphs: &GlyphSet) -> Result<Dataset> {
    Ok(generate_dataset(&cfg.data.generator, glyphs, cfg.data.val_scenes, cfg.data.val_seed)?.0)
}

/// Single-writer training loop state.
pub struct Trainer {
    pub cfg: RunConfig,
    pub model: SpotterModel,
    pub params: ParamStore<f32>,
    pub glyphs: GlyphSet,
    pub data: Dataset,
    /// Boundary-bearing copy of the training images, for evaluation.
    pub eval_data: Dataset,
    opt: AdamW<f32>,
    lr_scale: Vec<f64>,
    pub step: usize,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let glyphs = cfg.glyphs()?;
        let reference = load_training_data(&RunConfig { line_mode: false, ..cfg.clone() }, &glyphs)?;
        let data = if cfg.line_mode { reference.to_lines() } else { reference.clone() };
        Self::with_data(cfg, data, reference)
    }

    /// Trainer over an explicit dataset (already in line form if needed);
    /// `eval_data` holds the same images with full ground truth.
    pub fn with_data(cfg: RunConfig, data: Dataset, eval_data: Dataset) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        let glyphs = cfg.glyphs()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (model, mut params) = SpotterModel::new::<f32, _>(cfg.model.clone(), &mut rng)?;
        if let Some(p) = &cfg.init_checkpoint {
            crate::diffmath::load_into(p, &mut params)?;
        }
        let opt = AdamW::new(AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamWConfig::default() }, &params)?;
        let lr_scale = params.names().iter().map(|n| if n.starts_with("stem.") { cfg.stem_lr_mult } else { 1.0 }).collect();
        Ok(Self { cfg, model, params, glyphs, data, eval_data, opt, lr_scale, step: 0 })
    }

    /// Seed that fixes the samples and augmentation of step `step`.
    pub fn batch_seed(&self, step: usize) -> u64 {
        scene_seed(self.cfg.seed ^ 0x0b47_c4_5eed, step)
    }

    /// Samples of step `step`, augmented.
    pub fn batch_for(&self, step: usize) -> Result<Vec<Sample>> {
        let (len, bs) = (self.data.len(), self.cfg.data.batch_size);
        let mut rng = ChaCha8Rng::seed_from_u64(self.batch_seed(step));
        let policy = if self.cfg.line_mode { self.cfg.data.augment.for_lines() } else { self.cfg.data.augment.clone() };
        (0..bs)
            .map(|j| {
                let pos = step * bs + j;
                let idx = epoch_order(len, self.cfg.seed, (pos / len) as u64)[pos % len];
                let s = &self.data.samples[idx];
                let (image, gts) = augment(&s.image, &s.gts, &policy, &mut rng)?;
                Ok(Sample { name: s.name.clone(), image, gts })
            })
            .collect()
    }

    /// Forward, backward and one optimizer update. Returns the batch-mean losses.
    pub fn train_step(&mut self) -> Result<LossBreakdown> {
        let step = self.step;
        let samples = self.batch_for(step)?;
        let batch = batch_samples::<f32>(&samples, self.cfg.data.image_size, self.cfg.model.coarsest_stride())?;
        let loss_cfg = self.cfg.effective_loss();
        let b = batch.len() as f64;
        let mut grads: Option<Vec<Vec<f32>>> = None;
        let mut sum = LossBreakdown::default();
        for i in 0..batch.len() {
            let targets = targets_for(&batch.gts[i], &self.glyphs)?;
            let mut tape = Tape::new();
            self.params.bind(&mut tape)?;
            let diverged = |detail: String| Error::Diverged { step, batch_seed: self.batch_seed(step), detail };
            let (loss, parts) = match image_loss(&self.model, &mut tape, &batch.images[i], batch.valid[i], &targets, &loss_cfg) {
                Ok(r) => r,
                Err(e) if !tape.all_finite() => return Err(diverged(format!("non-finite activations on {}: {e}", batch.names[i]))),
                Err(e) => return Err(e),
            };
            if !is_finite(&parts) {
                return Err(diverged(format!("non-finite loss {parts:?} on {}", batch.names[i])));
            }
            let loss = tape.scale(loss, 1.0 / b as f32);
            tape.backward(loss)?;
            let g = self.params.grads(&tape);
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, g)| a.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            }
            sum = add_breakdown(sum, parts);
        }
        let mut grads = grads.expect("non-empty batch");
        if grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step, batch_seed: self.batch_seed(step), detail: format!("non-finite gradient on {:?}", batch.names) });
        }
        if let Some(c) = self.cfg.grad_clip {
            clip_grad_norm(&mut grads, c);
        }
        self.opt.config.lr = self.cfg.lr_at(step);
        self.opt.step(&mut self.params, &grads, Some(&self.lr_scale))?;
        self.step += 1;
        Ok(scale_breakdown(sum, 1.0 / b))
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta { model: self.cfg.model.clone(), line_mode: self.cfg.line_mode, image_size: self.cfg.data.image_size }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::diffmath::save(path, &self.params, self.step as u64, serde_json::to_value(self.meta())?)
    }
}

/// Paths written by [`cmd_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub losses: Vec<LossBreakdown>,
    pub evals: Vec<(usize, EvalSummary)>,
}

/// Trains for `cfg.iterations` steps. Writes `config.json`, `metrics.jsonl`
/// (one line per step), `checkpoint.bin` (+ manifest) at the configured
/// cadence and at the end, and `eval.jsonl` when evaluation is enabled. A
/// non-finite loss aborts the run after writing `diverged.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput> {
    let trainer = Trainer::new(cfg.clone())?;
    run_training(trainer)
}

pub fn run_training(mut trainer: Trainer) -> Result<TrainOutput> {
    let cfg = trainer.cfg.clone();
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let checkpoint = cfg.out_dir.join("checkpoint.bin");
    let metrics = cfg.out_dir.join("metrics.jsonl");
    let mut log = std::fs::File::create(&metrics)?;
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut evals = Vec::new();
    trainer.save(&checkpoint)?;
    while trainer.step < cfg.iterations {
        let step = trainer.step;
        let parts = match trainer.train_step() {
            Ok(p) => p,
            Err(e @ Error::Diverged { .. }) => {
                let dump = serde_json::json!({ "step": step, "batch_seed": trainer.batch_seed(step), "error": e.to_string() });
                std::fs::write(cfg.out_dir.join("diverged.json"), serde_json::to_string_pretty(&dump)?)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        writeln!(log, "{}", serde_json::to_string(&StepLog { step, loss: parts })?)?;
        losses.push(parts);
        if cfg.checkpoint_every > 0 && trainer.step % cfg.checkpoint_every == 0 {
            trainer.save(&checkpoint)?;
        }
        if cfg.eval_every > 0 && trainer.step % cfg.eval_every == 0 {
            let s = evaluate_dataset(&trainer.model, &trainer.params, &trainer.glyphs, &trainer.eval_data, &cfg, None)?;
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(cfg.out_dir.join("eval.jsonl"))?;
            writeln!(f, "{}", serde_json::json!({ "step": trainer.step, "summary": s }))?;
            evals.push((trainer.step, s));
        }
    }
    trainer.save(&checkpoint)?;
    Ok(TrainOutput { checkpoint, metrics, losses, evals })
}

/// Rebuilds a model and its weights from a checkpoint written by training.
pub fn load_model(path: &Path) -> Result<(SpotterModel, ParamStore<f32>, CheckpointMeta)> {
    let manifest = crate::diffmath::read_manifest(path)?;
    let meta: CheckpointMeta = serde_json::from_value(manifest.extra.clone())
        .map_err(|e| Error::Checkpoint(format!("checkpoint metadata is not a model description: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (model, mut params) = SpotterModel::new::<f32, _>(meta.model.clone(), &mut rng)?;
    crate::diffmath::load_into(path, &mut params)?;
    Ok((model, params, meta))
}
