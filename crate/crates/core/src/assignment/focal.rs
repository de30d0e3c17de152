//! Focal classification terms.

use crate::diffmath::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use num_traits::Float;

/// Probability clamp used by the matching cost.
pub const COST_EPS: f64 = 1e-8;

/// Matching cost `FL′(p) = −α(1−p)^γ ln p + (1−α) p^γ ln(1−p)`.
///
/// Decreasing in `p`; `p` is clamped to `[ε, 1−ε]` so both logs stay finite.
pub fn focal_cost<T: Float>(p: T, alpha: T, gamma: T) -> T {
    let eps = T::from(COST_EPS).unwrap();
    let one = T::one();
    let p = p.max(eps).min(one - eps);
    -alpha * (one - p).powf(gamma) * p.ln() + (one - alpha) * p.powf(gamma) * (one - p).ln()
}

/// `ln σ(x)` without overflow.
fn log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl<T: Scalar> Tape<T> {
    /// Summed sigmoid focal loss over `logits` with binary `targets`.
    ///
    /// Positives contribute `−α(1−p)^γ ln p`, negatives `−(1−α) p^γ ln(1−p)`;
    /// `weights` scales each element's contribution.
    pub fn sigmoid_focal_loss(&mut self, logits: Var, targets: &[bool], weights: &[T], alpha: T, gamma: T) -> Result<Var> {
        let n = self.value(logits).len();
        if targets.len() != n || weights.len() != n {
            return Err(shape_err(
                "sigmoid_focal_loss",
                format!("{} logits, {} targets, {} weights", n, targets.len(), weights.len()),
            ));
        }
        let one = T::one();
        let mut total = T::zero();
        let mut dlogit = vec![T::zero(); n];
        for (i, &x) in self.value(logits).iter().enumerate() {
            let p = crate::diffmath::sigmoid(x);
            let w = weights[i];
            if targets[i] {
                let lp = log_sigmoid(x);
                let q = one - p;
                total += -w * alpha * q.powf(gamma) * lp;
                dlogit[i] = w * alpha * q.powf(gamma) * (gamma * p * lp - q);
            } else {
                let lq = log_sigmoid(-x);
                total += -w * (one - alpha) * p.powf(gamma) * lq;
                dlogit[i] = w * (one - alpha) * p.powf(gamma) * (p - gamma * (one - p) * lq);
            }
        }
        Ok(self.push(vec![], vec![total], &[logits], move |cx, g| {
            let go = cx.grad()[0];
            if let Some(gl) = g.slot(logits) {
                gl.iter_mut().zip(&dlogit).for_each(|(d, &v)| *d += go * v);
            }
        }))
    }
}
