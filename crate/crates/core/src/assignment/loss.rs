//! Matching costs and the training objective.

use super::ctc::{ctc_forward, ctc_required_steps};
use super::focal::focal_cost;
use super::hungarian::{hungarian, CostMatrix, MatchResult};
use crate::diffmath::{log_sum_exp, sigmoid, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{bernstein, Point2, TextInstanceGT};
use crate::model::{EncoderPrediction, LayerPrediction};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_cls: f64,
    pub lambda_coord: f64,
    pub lambda_bd: f64,
    pub lambda_text: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Matching cost substituted for a CTC term whose label cannot fit in `N` steps.
    pub cost_max: f64,
    /// Supervise every decoder layer rather than only the last.
    pub deep_supervision: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_coord: 1.0,
            lambda_bd: 0.5,
            lambda_text: 0.5,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            cost_max: 1e4,
            deep_supervision: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_cls, self.lambda_coord, self.lambda_bd, self.lambda_text];
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative, got {w:?}")));
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) || !(self.focal_gamma >= 0.0) {
            return Err(Error::Config("focal alpha must lie in [0, 1] and gamma be non-negative".into()));
        }
        Ok(())
    }

    /// Indices of the decoder layers that receive a loss.
    pub fn supervised_layers(&self, n_layers: usize) -> Vec<usize> {
        if self.deep_supervision {
            (0..n_layers).collect()
        } else {
            n_layers.checked_sub(1).into_iter().collect()
        }
    }
}

/// One ground-truth instance in training form.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    /// Character classes `1..=vocab`.
    pub label: Vec<usize>,
    pub center: Vec<Point2>,
    pub top: Option<Vec<Point2>>,
    pub bot: Option<Vec<Point2>>,
}

impl Target {
    pub fn new(gt: &TextInstanceGT, label: Vec<usize>) -> Self {
        Self {
            label,
            center: gt.center.clone(),
            top: gt.top.clone(),
            bot: gt.bot.clone(),
        }
    }
}

/// `Σ_n |Δx_n| + |Δy_n|`.
pub fn coord_cost(gt: &[Point2], pred: &[Point2]) -> Result<f64> {
    if gt.len() != pred.len() {
        return Err(Error::Domain(format!("coord_cost: {} ground-truth points vs {} predicted", gt.len(), pred.len())));
    }
    Ok(gt.iter().zip(pred).map(|(a, b)| a.l1(*b)).sum())
}

/// Detached per-query quantities used for matching.
#[derive(Debug, Clone)]
pub struct QueryView {
    pub k: usize,
    pub n: usize,
    pub classes: usize,
    /// `[K, N]` per-point instance probabilities.
    pub point_probs: Vec<f64>,
    /// `[K, N, classes]` character log-probabilities.
    pub log_probs: Vec<f64>,
    /// `[K, N]` center points.
    pub center: Vec<Point2>,
}

impl QueryView {
    pub fn from_layer<T: Scalar>(tape: &Tape<T>, layer: &LayerPrediction) -> Result<Self> {
        let shape = tape.shape(layer.char_logits).to_vec();
        if shape.len() != 3 {
            return Err(crate::error::shape_err("query_view", format!("char logits must be [K, N, C], got {shape:?}")));
        }
        let (k, n, classes) = (shape[0], shape[1], shape[2]);
        let to64 = |v: &[T]| v.iter().map(|x| x.to_f64().unwrap()).collect::<Vec<f64>>();
        let point_probs = to64(tape.value(layer.instance_logits)).into_iter().map(sigmoid).collect();
        let mut log_probs = to64(tape.value(layer.char_logits));
        for row in log_probs.chunks_mut(classes) {
            let z = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= z);
        }
        let c = to64(tape.value(layer.center));
        let center = c.chunks(2).map(|p| Point2::new(p[0], p[1])).collect();
        Ok(Self { k, n, classes, point_probs, log_probs, center })
    }

    /// Query confidence: mean of its `N` point probabilities.
    pub fn confidence(&self, k: usize) -> f64 {
        self.point_probs[k * self.n..(k + 1) * self.n].iter().sum::<f64>() / self.n as f64
    }

    pub fn center_of(&self, k: usize) -> &[Point2] {
        &self.center[k * self.n..(k + 1) * self.n]
    }

    pub fn log_probs_of(&self, k: usize) -> &[f64] {
        let w = self.n * self.classes;
        &self.log_probs[k * w..(k + 1) * w]
    }
}

/// `C(g, k) = λ_cls FL′(b̂_k) + λ_text CTC(t_g, t̂_k) + λ_coord Σ_n |p_n − p̂_n|₁`.
pub fn build_cost_matrix(targets: &[Target], view: &QueryView, cfg: &LossConfig) -> Result<CostMatrix> {
    if targets.len() > view.k {
        return Err(Error::Matching(format!("{} ground truths but only {} queries", targets.len(), view.k)));
    }
    let (alpha, gamma) = (cfg.focal_alpha, cfg.focal_gamma);
    let cls: Vec<f64> = (0..view.k).map(|k| focal_cost(view.confidence(k), alpha, gamma)).collect();
    let mut data = Vec::with_capacity(targets.len() * view.k);
    for t in targets {
        let feasible = ctc_required_steps(&t.label) <= view.n;
        for k in 0..view.k {
            let text = if cfg.lambda_text == 0.0 {
                0.0
            } else if feasible {
                ctc_forward(&t.label, view.log_probs_of(k), view.n, view.classes)?
            } else {
                cfg.cost_max
            };
            let coord = coord_cost(&t.center, view.center_of(k))?;
            data.push(cfg.lambda_cls * cls[k] + cfg.lambda_text * text + cfg.lambda_coord * coord);
        }
    }
    CostMatrix::new(targets.len(), view.k, data)
}

/// Matches ground truths to one decoder layer's queries.
pub fn match_layer<T: Scalar>(tape: &Tape<T>, targets: &[Target], layer: &LayerPrediction, cfg: &LossConfig) -> Result<MatchResult> {
    let view = QueryView::from_layer(tape, layer)?;
    hungarian(&build_cost_matrix(targets, &view, cfg)?)
}

/// Weighted decoder loss terms, each summed over supervised layers.
#[derive(Debug, Clone, Copy)]
pub struct DecoderLoss {
    pub cls: Var,
    pub text: Var,
    pub coord: Var,
    pub bd: Var,
    /// `λ_cls·cls + λ_text·text + λ_coord·coord + λ_bd·bd`.
    pub total: Var,
}

#[derive(Debug, Clone)]
pub struct EncoderLoss {
    pub cls: Var,
    pub coord: Var,
    /// `λ_cls·cls + λ_coord·coord`.
    pub total: Var,
    pub matching: MatchResult,
}

fn points_tensor<T: Scalar>(tape: &mut Tape<T>, rows: &[&[Point2]]) -> Result<Var> {
    let n = rows.first().map_or(0, |r| r.len());
    let data = rows.iter().flat_map(|r| r.iter().flat_map(|p| [T::lit(p.x), T::lit(p.y)])).collect();
    tape.constant_from(&[rows.len(), n, 2], data)
}

fn l1_to<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let a = tape.abs(d);
    Ok(tape.sum(a))
}

fn sum_or_zero<T: Scalar>(tape: &mut Tape<T>, items: &[Var]) -> Result<Var> {
    if items.is_empty() {
        Ok(tape.scalar_const(T::zero()))
    } else {
        tape.add_n(items)
    }
}

fn weighted<T: Scalar>(tape: &mut Tape<T>, terms: &[(f64, Var)]) -> Result<Var> {
    let parts: Vec<Var> = terms.iter().map(|&(w, v)| tape.scale(v, T::lit(w))).collect();
    tape.add_n(&parts)
}

/// Decoder loss for `layers[i]` matched by `matches[i]`.
///
/// The focal term covers all `K·N` point logits, averaged over the `N` points
/// of a query and summed over queries. CTC, center and boundary terms cover
/// matched queries only; the boundary term skips instances without sides and
/// is not built at all when `λ_bd = 0`.
pub fn loss_decoder<T: Scalar>(
    tape: &mut Tape<T>,
    targets: &[Target],
    layers: &[LayerPrediction],
    matches: &[MatchResult],
    cfg: &LossConfig,
) -> Result<DecoderLoss> {
    if layers.len() != matches.len() {
        return Err(Error::Domain(format!("{} layers but {} matchings", layers.len(), matches.len())));
    }
    let (alpha, gamma) = (T::lit(cfg.focal_alpha), T::lit(cfg.focal_gamma));
    let (mut cls, mut text, mut coord, mut bd) = (vec![], vec![], vec![], vec![]);
    for (layer, m) in layers.iter().zip(matches) {
        let shape = tape.shape(layer.instance_logits).to_vec();
        let (k, n) = (shape[0], shape[1]);
        let inv = m.inverse(k);
        let flags: Vec<bool> = (0..k * n).map(|i| inv[i / n].is_some()).collect();
        let w = vec![T::one() / T::lit(n as f64); k * n];
        cls.push(tape.sigmoid_focal_loss(layer.instance_logits, &flags, &w, alpha, gamma)?);
        if m.is_empty() {
            continue;
        }
        let ks: Vec<usize> = m.query.clone();
        if cfg.lambda_text > 0.0 {
            let lp = tape.log_softmax(layer.char_logits)?;
            let classes = tape.shape(lp)[2];
            for (g, q) in m.pairs() {
                let row = tape.index_select(lp, 0, &[q])?;
                let row = tape.reshape(row, &[n, classes])?;
                text.push(tape.ctc_loss(row, &targets[g].label)?);
            }
        }
        let centers: Vec<&[Point2]> = m.pairs().map(|(g, _)| targets[g].center.as_slice()).collect();
        let sel = tape.index_select(layer.center, 0, &ks)?;
        let tgt = points_tensor(tape, &centers)?;
        coord.push(l1_to(tape, sel, tgt)?);
        if cfg.lambda_bd > 0.0 {
            let with_sides: Vec<(usize, usize)> = m.pairs().filter(|&(g, _)| targets[g].top.is_some() && targets[g].bot.is_some()).collect();
            if !with_sides.is_empty() {
                let qs: Vec<usize> = with_sides.iter().map(|&(_, q)| q).collect();
                for (side, pick) in [(layer.top, true), (layer.bot, false)] {
                    let rows: Vec<&[Point2]> = with_sides
                        .iter()
                        .map(|&(g, _)| if pick { targets[g].top.as_deref().unwrap() } else { targets[g].bot.as_deref().unwrap() })
                        .collect();
                    let sel = tape.index_select(side, 0, &qs)?;
                    let tgt = points_tensor(tape, &rows)?;
                    bd.push(l1_to(tape, sel, tgt)?);
                }
            }
        }
    }
    let cls = sum_or_zero(tape, &cls)?;
    let text = sum_or_zero(tape, &text)?;
    let coord = sum_or_zero(tape, &coord)?;
    let bd = sum_or_zero(tape, &bd)?;
    let total = weighted(tape, &[(cfg.lambda_cls, cls), (cfg.lambda_text, text), (cfg.lambda_coord, coord), (cfg.lambda_bd, bd)])?;
    Ok(DecoderLoss { cls, text, coord, bd, total })
}

/// L1 distance between `n` samples of a proposal curve and a target center.
fn sampled_l1(control: &[f64], center: &[Point2]) -> f64 {
    let n = center.len();
    (0..n)
        .map(|i| {
            let w = bernstein(i as f64 / (n - 1) as f64);
            let x: f64 = (0..4).map(|j| w[j] * control[2 * j]).sum();
            let y: f64 = (0..4).map(|j| w[j] * control[2 * j + 1]).sum();
            (x - center[i].x).abs() + (y - center[i].y).abs()
        })
        .sum()
}

/// `[N, 4]` Bernstein weights at `t = i / (N − 1)`.
pub fn bernstein_matrix(n: usize) -> Vec<f64> {
    (0..n).flat_map(|i| bernstein(i as f64 / (n.max(2) - 1) as f64)).collect()
}

/// Encoder cost over all valid pixels: `λ_cls FL′(σ(s)) + λ_coord Σ_n |p_n − p̂_n|₁`.
pub fn encoder_cost_matrix<T: Scalar>(tape: &Tape<T>, targets: &[Target], enc: &EncoderPrediction, cfg: &LossConfig) -> Result<CostMatrix> {
    let scores = tape.value(enc.score_logits);
    let control = tape.value(enc.control);
    let s = scores.len();
    let valid_count = enc.valid.iter().filter(|&&v| v).count();
    if targets.len() > valid_count {
        return Err(Error::Matching(format!("{} ground truths but only {} valid pixels", targets.len(), valid_count)));
    }
    let cls: Vec<f64> = scores
        .iter()
        .map(|x| focal_cost(sigmoid(x.to_f64().unwrap()), cfg.focal_alpha, cfg.focal_gamma))
        .collect();
    let ctrl: Vec<f64> = control.iter().map(|x| x.to_f64().unwrap()).collect();
    let mut data = Vec::with_capacity(targets.len() * s);
    for t in targets {
        for i in 0..s {
            data.push(if enc.valid[i] {
                cfg.lambda_cls * cls[i] + cfg.lambda_coord * sampled_l1(&ctrl[8 * i..8 * i + 8], &t.center)
            } else {
                cfg.cost_max * (1.0 + targets.len() as f64)
            });
        }
    }
    CostMatrix::new(targets.len(), s, data)
}

/// Encoder auxiliary loss: focal over valid pixels plus L1 over sampled
/// center points of the matched proposals.
pub fn loss_encoder<T: Scalar>(tape: &mut Tape<T>, targets: &[Target], enc: &EncoderPrediction, cfg: &LossConfig) -> Result<EncoderLoss> {
    let matching = hungarian(&encoder_cost_matrix(tape, targets, enc, cfg)?)?;
    let s = tape.value(enc.score_logits).len();
    let inv = matching.inverse(s);
    let flags: Vec<bool> = inv.iter().map(Option::is_some).collect();
    let w: Vec<T> = enc.valid.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
    let (alpha, gamma) = (T::lit(cfg.focal_alpha), T::lit(cfg.focal_gamma));
    let cls = tape.sigmoid_focal_loss(enc.score_logits, &flags, &w, alpha, gamma)?;
    let coord = if matching.is_empty() {
        tape.scalar_const(T::zero())
    } else {
        let mut parts = Vec::new();
        // targets may differ in point count, so sample per instance
        for (g, q) in matching.pairs() {
            let n = targets[g].center.len();
            let ctrl = tape.index_select(enc.control, 0, &[q])?;
            let ctrl = tape.reshape(ctrl, &[4, 2])?;
            let b = bernstein_matrix(n).into_iter().map(T::lit).collect();
            let b = tape.constant_from(&[n, 4], b)?;
            let pts = tape.matmul(b, ctrl)?;
            let pts = tape.reshape(pts, &[1, n, 2])?;
            let tgt = points_tensor(tape, &[targets[g].center.as_slice()])?;
            parts.push(l1_to(tape, pts, tgt)?);
        }
        tape.add_n(&parts)?
    };
    let total = weighted(tape, &[(cfg.lambda_cls, cls), (cfg.lambda_coord, coord)])?;
    Ok(EncoderLoss { cls, coord, total, matching })
}

/// Scalar values of every loss component, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_text: f64,
    pub l_coord: f64,
    pub l_bd: f64,
    pub l_enc: f64,
    pub total: f64,
}

/// `L = L_dec + L_enc`.
pub fn total_loss<T: Scalar>(tape: &mut Tape<T>, dec: &DecoderLoss, enc: &EncoderLoss) -> Result<(Var, LossBreakdown)> {
    let total = tape.add(dec.total, enc.total)?;
    let f = |v: Var| tape.item(v).to_f64().unwrap();
    let parts = LossBreakdown {
        l_cls: f(dec.cls),
        l_text: f(dec.text),
        l_coord: f(dec.coord),
        l_bd: f(dec.bd),
        l_enc: f(enc.total),
        total: f(total),
    };
    Ok((total, parts))
}
