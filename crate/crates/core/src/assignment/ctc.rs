//! Connectionist temporal classification over `N` point queries.
//!
//! Class 0 is the blank. Labels use classes `1..C`.

use crate::diffmath::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Minimum number of steps that can emit `label`: one per symbol plus a
/// separating blank between equal neighbours.
pub fn ctc_required_steps(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_feasible(label: &[usize], steps: usize) -> Result<()> {
    let required = ctc_required_steps(label);
    if required > steps {
        return Err(Error::Infeasible {
            label_len: label.len(),
            required,
            steps,
        });
    }
    Ok(())
}

fn log_add<T: Scalar>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Forward/backward lattices of one CTC evaluation.
struct Lattice<T> {
    nll: T,
    /// Posterior occupancy `γ_t(c)` per step and class.
    occupancy: Vec<T>,
}

fn lattice<T: Scalar>(label: &[usize], log_probs: &[T], steps: usize, classes: usize, with_posterior: bool) -> Result<Lattice<T>> {
    if log_probs.len() != steps * classes || steps == 0 {
        return Err(shape_err("ctc", format!("{} log-probs for {} steps × {} classes", log_probs.len(), steps, classes)));
    }
    if let Some(&bad) = label.iter().find(|&&c| c == 0 || c >= classes) {
        return Err(Error::Domain(format!("label class {bad} outside 1..{classes}")));
    }
    check_feasible(label, steps)?;
    let ext: Vec<usize> = std::iter::once(0).chain(label.iter().flat_map(|&c| [c, 0])).collect();
    let s_len = ext.len();
    let ninf = T::neg_infinity();
    let lp = |t: usize, c: usize| log_probs[t * classes + c];
    // a transition s-2 → s is allowed onto a non-blank that differs from ext[s-2]
    let skip = |s: usize| s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2];

    let mut alpha = vec![ninf; steps * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..steps {
        for s in 0..s_len {
            let mut acc = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                acc = log_add(acc, alpha[(t - 1) * s_len + s - 1]);
            }
            if skip(s) {
                acc = log_add(acc, alpha[(t - 1) * s_len + s - 2]);
            }
            if acc != ninf {
                alpha[t * s_len + s] = acc + lp(t, ext[s]);
            }
        }
    }
    let last = (steps - 1) * s_len;
    let mut ll = alpha[last + s_len - 1];
    if s_len > 1 {
        ll = log_add(ll, alpha[last + s_len - 2]);
    }
    if ll == ninf {
        return Err(Error::Domain("CTC likelihood underflowed to zero".into()));
    }
    let mut occupancy = Vec::new();
    if with_posterior {
        let mut beta = vec![ninf; steps * s_len];
        beta[last + s_len - 1] = lp(steps - 1, ext[s_len - 1]);
        if s_len > 1 {
            beta[last + s_len - 2] = lp(steps - 1, ext[s_len - 2]);
        }
        for t in (0..steps - 1).rev() {
            for s in 0..s_len {
                let mut acc = beta[(t + 1) * s_len + s];
                if s + 1 < s_len {
                    acc = log_add(acc, beta[(t + 1) * s_len + s + 1]);
                }
                if s + 2 < s_len && skip(s + 2) {
                    acc = log_add(acc, beta[(t + 1) * s_len + s + 2]);
                }
                if acc != ninf {
                    beta[t * s_len + s] = acc + lp(t, ext[s]);
                }
            }
        }
        // α and β both include the emission at t, so divide it out once
        occupancy = vec![T::zero(); steps * classes];
        for t in 0..steps {
            for s in 0..s_len {
                let (a, b) = (alpha[t * s_len + s], beta[t * s_len + s]);
                if a == ninf || b == ninf {
                    continue;
                }
                occupancy[t * classes + ext[s]] += (a + b - lp(t, ext[s]) - ll).exp();
            }
        }
    }
    Ok(Lattice { nll: -ll, occupancy })
}

/// Negative log-likelihood of `label` under per-step log-probabilities
/// `log_probs` (`steps × classes`, row-major).
pub fn ctc_forward<T: Scalar>(label: &[usize], log_probs: &[T], steps: usize, classes: usize) -> Result<T> {
    Ok(lattice(label, log_probs, steps, classes, false)?.nll)
}

/// Greedy decode: per-step argmax, merge repeats, drop blanks.
pub fn ctc_greedy_decode<T: Scalar>(scores: &[T], steps: usize, classes: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for t in 0..steps {
        let row = &scores[t * classes..(t + 1) * classes];
        let best = (0..classes).fold(0, |b, c| if row[c] > row[b] { c } else { b });
        if best != prev && best != 0 {
            out.push(best);
        }
        prev = best;
    }
    out
}

impl<T: Scalar> Tape<T> {
    /// CTC negative log-likelihood of `label` given `log_probs` `[steps, classes]`.
    ///
    /// The gradient w.r.t. `log_probs[t, c]` is minus the posterior occupancy
    /// of class `c` at step `t`.
    pub fn ctc_loss(&mut self, log_probs: Var, label: &[usize]) -> Result<Var> {
        let shape = self.shape(log_probs).to_vec();
        if shape.len() != 2 {
            return Err(shape_err("ctc_loss", format!("log-probs must be [steps, classes], got {shape:?}")));
        }
        let want = self.is_tracked(log_probs);
        let lat = lattice(label, self.value(log_probs), shape[0], shape[1], want)?;
        let occupancy = lat.occupancy;
        Ok(self.push(vec![], vec![lat.nll], &[log_probs], move |cx, g| {
            let go = cx.grad()[0];
            if let Some(gl) = g.slot(log_probs) {
                gl.iter_mut().zip(&occupancy).for_each(|(d, &o)| *d -= go * o);
            }
        }))
    }
}
