//! Detection, end-to-end and line-protocol scores.

use super::infer::SpotInstance;
use super::polygon::{contains, polygon_iou, polyline_midpoint};
use crate::error::{Error, Result};
use crate::geometry::TextInstanceGT;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Score {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Score {
    pub fn from_counts(tp: usize, n_pred: usize, n_gt: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (p, r) = (ratio(tp, n_pred), ratio(tp, n_gt));
        let f1 = if tp == 0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Self { tp, fp: n_pred - tp, fn_: n_gt - tp, precision: p, recall: r, f1 }
    }
}

/// Prediction `pred` of image `image` paired with ground truth `gt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub image: usize,
    pub pred: usize,
    pub gt: usize,
}

/// Indices by descending confidence; equal confidences keep input order.
fn by_confidence(preds: &[SpotInstance]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence).then(a.cmp(&b)));
    idx
}

/// Greedy one-to-one matching: in descending confidence, each prediction
/// takes the unmatched ground truth it scores best against, provided
/// `score` returns `Some`.
fn greedy(preds: &[SpotInstance], gts: &[TextInstanceGT], mut score: impl FnMut(&SpotInstance, usize) -> Option<f64>) -> Vec<(usize, usize)> {
    let mut used = vec![false; gts.len()];
    let mut out = Vec::new();
    for p in by_confidence(preds) {
        let mut best: Option<(usize, f64)> = None;
        for g in 0..gts.len() {
            if used[g] {
                continue;
            }
            if let Some(s) = score(&preds[p], g) {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((g, s));
                }
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
            out.push((p, g));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionReport {
    pub score: Score,
    /// Predictions whose polygon is missing or self-intersecting.
    pub invalid_predictions: usize,
    #[serde(skip)]
    pub pairs: Vec<Pair>,
}

fn check_lengths(preds: &[Vec<SpotInstance>], gts: &[Vec<TextInstanceGT>]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Domain(format!("{} predicted images vs {} ground-truth images", preds.len(), gts.len())));
    }
    Ok(())
}

/// Polygon IoU matching. Invalid predicted polygons never match and are
/// counted in `invalid_predictions`.
pub fn eval_detection(preds: &[Vec<SpotInstance>], gts: &[Vec<TextInstanceGT>], iou_threshold: f64) -> Result<DetectionReport> {
    check_lengths(preds, gts)?;
    let mut report = DetectionReport::default();
    let (mut n_pred, mut n_gt) = (0, 0);
    for (i, (ps, gs)) in preds.iter().zip(gts).enumerate() {
        n_pred += ps.len();
        n_gt += gs.len();
        report.invalid_predictions += ps.iter().filter(|p| p.polygon.is_none() || !p.valid_polygon).count();
        let gt_polys: Vec<Option<Vec<_>>> = gs.iter().map(|g| g.polygon()).collect();
        let matched = greedy(ps, gs, |p, g| {
            let (pp, gp) = (p.polygon.as_ref().filter(|_| p.valid_polygon)?, gt_polys[g].as_ref()?);
            polygon_iou(pp, gp).filter(|&v| v >= iou_threshold)
        });
        report.pairs.extend(matched.into_iter().map(|(pred, gt)| Pair { image: i, pred, gt }));
    }
    report.score = Score::from_counts(report.pairs.len(), n_pred, n_gt);
    Ok(report)
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Nearest lexicon word by edit distance; ties go to the lexicographically
/// smallest word.
pub fn nearest_word<'a>(word: &str, lexicon: &'a [String]) -> Option<&'a str> {
    lexicon.iter().map(|w| (levenshtein(word, w), w.as_str())).min().map(|(_, w)| w)
}

fn fold(s: &str) -> String {
    s.to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct E2eReport {
    pub detection: Score,
    pub none: Score,
    pub full: Score,
}

/// End-to-end scores over the detection matching.
///
/// `None`: a matched pair is a hit when the transcripts agree after case
/// folding. `Full`: the predicted transcript is first replaced by its nearest
/// lexicon word. The lexicon always contains every ground-truth transcript of
/// the evaluated set; `lexicon` adds further words. An explicitly empty
/// lexicon is a configuration error.
pub fn eval_e2e(preds: &[Vec<SpotInstance>], gts: &[Vec<TextInstanceGT>], lexicon: Option<&[String]>, iou_threshold: f64) -> Result<E2eReport> {
    if lexicon.is_some_and(|l| l.is_empty()) {
        return Err(Error::Config("Full evaluation needs a non-empty lexicon".into()));
    }
    let det = eval_detection(preds, gts, iou_threshold)?;
    let mut words: Vec<String> = gts.iter().flatten().map(|g| fold(&g.transcript)).chain(lexicon.into_iter().flatten().map(|w| fold(w))).collect();
    words.sort();
    words.dedup();
    let (n_pred, n_gt) = (preds.iter().map(Vec::len).sum(), gts.iter().map(Vec::len).sum());
    let (mut none, mut full) = (0, 0);
    for pair in &det.pairs {
        let (p, g) = (fold(&preds[pair.image][pair.pred].transcript), fold(&gts[pair.image][pair.gt].transcript));
        none += usize::from(p == g);
        full += usize::from(nearest_word(&p, &words) == Some(g.as_str()));
    }
    Ok(E2eReport { detection: det.score, none: Score::from_counts(none, n_pred, n_gt), full: Score::from_counts(full, n_pred, n_gt) })
}

/// Line protocol: a prediction matches an unmatched ground truth whose
/// polygon contains the arc-length midpoint of the predicted center line;
/// matched pairs with equal (case-folded) transcripts are hits.
pub fn eval_line_protocol(preds: &[Vec<SpotInstance>], gts: &[Vec<TextInstanceGT>]) -> Result<Score> {
    check_lengths(preds, gts)?;
    let (mut hits, mut n_pred, mut n_gt) = (0, 0, 0);
    for (ps, gs) in preds.iter().zip(gts) {
        n_pred += ps.len();
        n_gt += gs.len();
        let polys: Vec<Option<Vec<_>>> = gs.iter().map(|g| g.polygon()).collect();
        let matched = greedy(ps, gs, |p, g| {
            let mid = polyline_midpoint(&p.center)?;
            // earlier ground truth wins among containing polygons
            polys[g].as_ref().filter(|poly| contains(poly, mid)).map(|_| -(g as f64))
        });
        hits += matched.iter().filter(|&&(p, g)| fold(&ps[p].transcript) == fold(&gs[g].transcript)).count();
    }
    Ok(Score::from_counts(hits, n_pred, n_gt))
}
