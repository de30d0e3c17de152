use super::config::RunConfig;
use super::evaluate::{gts_in_pixels, predict_dataset};
use super::metrics::eval_line_protocol;
use super::train::{load_training_data, run_training, Trainer};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::geometry::{perturb_line, TextInstanceGT};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub shift: f64,
    pub shrink: f64,
    pub none_f1: f64,
}

/// Line labels derived from `reference` with every center line shifted and
/// shrunk. The draws come from their own stream seeded by `seed`.
pub fn perturbed_lines(reference: &Dataset, shift: f64, shrink: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = reference
        .samples
        .iter()
        .map(|s| {
            let gts = s
                .gts
                .iter()
                .map(|g| {
                    let center = perturb_line(g, shift, shrink, &mut rng)?;
                    Ok(TextInstanceGT { center, top: None, bot: None, transcript: g.transcript.clone() })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Sample { gts, ..s.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { samples })
}

/// For every `(shift, shrink)` cell: train in line mode on perturbed labels
/// (from `cfg.init_checkpoint` when set), then score the line protocol on the
/// unperturbed training images. Writes `sensitivity.csv` into `cfg.out_dir`.
pub fn cmd_line_sensitivity(cfg: &RunConfig, shifts: &[f64], shrinks: &[f64]) -> Result<Vec<SensitivityRow>> {
    if shifts.is_empty() || shrinks.is_empty() {
        return Err(Error::Config("sensitivity grids must be non-empty".into()));
    }
    let base = RunConfig { line_mode: true, ..cfg.clone() };
    base.validate()?;
    let glyphs = base.glyphs()?;
    let reference = load_training_data(&RunConfig { line_mode: false, ..base.clone() }, &glyphs)?;
    if reference.samples.iter().flat_map(|s| &s.gts).any(|g| !g.has_boundary()) {
        return Err(Error::Config("line sensitivity needs boundary-bearing annotations".into()));
    }
    let gts = gts_in_pixels(&reference);
    std::fs::create_dir_all(&base.out_dir)?;
    let mut rows = Vec::new();
    for &shift in shifts {
        for &shrink in shrinks {
            let cell = RunConfig { out_dir: base.out_dir.join(format!("shift{shift}_shrink{shrink}")), ..base.clone() };
            let data = perturbed_lines(&reference, shift, shrink, base.seed ^ 0x11e5_0f75)?;
            let trainer = Trainer::with_data(cell.clone(), data, reference.clone())?;
            let out = run_training(trainer)?;
            let (model, params, _) = super::train::load_model(&out.checkpoint)?;
            let preds = predict_dataset(&model, &params, &glyphs, &reference, cell.data.image_size, cell.threshold, true)?;
            rows.push(SensitivityRow { shift, shrink, none_f1: eval_line_protocol(&preds, &gts)?.f1 });
        }
    }
    let mut f = std::fs::File::create(base.out_dir.join("sensitivity.csv"))?;
    writeln!(f, "shift,shrink,none_f1")?;
    for r in &rows {
        writeln!(f, "{},{},{}", r.shift, r.shrink, r.none_f1)?;
    }
    Ok(rows)
}
