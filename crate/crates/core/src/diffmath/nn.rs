//! Normalization, softmax, positional encoding and patch extraction.

use super::tape::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tape<T> {
    fn last_axis(&self, op: &'static str, a: Var) -> Result<usize> {
        match self.shape(a).last() {
            Some(&n) if n > 0 => Ok(n),
            _ => Err(shape_err(op, format!("needs a non-empty last axis, got {:?}", self.shape(a)))),
        }
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.last_axis("softmax", a)?;
        let mut out = self.value(a).to_vec();
        out.chunks_mut(n).for_each(softmax_in_place);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, &[a], move |cx, g| {
            let (y, go) = (cx.out_value(), cx.grad());
            if let Some(ga) = g.slot(a) {
                for ((gr, yr), dr) in go.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot = gr.iter().zip(yr).fold(T::zero(), |acc, (&g, &y)| acc + g * y);
                    for j in 0..n {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.last_axis("log_softmax", a)?;
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, &[a], move |cx, g| {
            let (y, go) = (cx.out_value(), cx.grad());
            if let Some(ga) = g.slot(a) {
                for ((gr, yr), dr) in go.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                    let total = gr.iter().fold(T::zero(), |acc, &g| acc + g);
                    for j in 0..n {
                        dr[j] += gr[j] - yr[j].exp() * total;
                    }
                }
            }
        }))
    }

    /// Normalizes every vector along the last axis to zero mean and unit
    /// variance, then applies the affine `gamma`, `beta` (each `[C]`).
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let n = self.last_axis("layer_norm", a)?;
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(shape_err(
                "layer_norm",
                format!("affine {:?}/{:?} for width {n}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let nt = T::from_usize(n).unwrap();
        let x = self.value(a);
        let rows = x.len() / n;
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let mean = row.iter().fold(T::zero(), |acc, &v| acc + v) / nt;
            let var = row.iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / nt;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                xhat[r * n + j] = (row[j] - mean) * rs;
            }
        }
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let out: Vec<T> = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| h * gv[i % n] + bv[i % n])
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, &[a, gamma, beta], move |cx, g| {
            let go = cx.grad();
            if g.wants(a) {
                let gv = cx.value(gamma);
                let ga = g.slot(a).unwrap();
                for r in 0..rows {
                    let (mut m1, mut m2) = (T::zero(), T::zero());
                    for j in 0..n {
                        let d = go[r * n + j] * gv[j];
                        m1 += d;
                        m2 += d * xhat[r * n + j];
                    }
                    m1 = m1 / nt;
                    m2 = m2 / nt;
                    for j in 0..n {
                        let d = go[r * n + j] * gv[j];
                        ga[r * n + j] += rstd[r] * (d - m1 - xhat[r * n + j] * m2);
                    }
                }
            }
            if let Some(gg) = g.slot(gamma) {
                for (i, &s) in go.iter().enumerate() {
                    gg[i % n] += s * xhat[i];
                }
            }
            if let Some(gb) = g.slot(beta) {
                for (i, &s) in go.iter().enumerate() {
                    gb[i % n] += s;
                }
            }
        }))
    }

    /// Sinusoidal encoding of coordinates `[R, D]` into `[R, D * feats]`:
    /// for each coordinate, `feats/2` frequency pairs `sin(c·2π/τ^(2i/feats))`
    /// and its cosine, interleaved.
    pub fn sinusoidal(&mut self, coords: Var, feats: usize, temperature: T) -> Result<Var> {
        let shape = self.shape(coords).to_vec();
        if shape.len() != 2 || feats == 0 || feats % 2 != 0 {
            return Err(shape_err("sinusoidal", format!("coords {:?}, feats {feats}", shape)));
        }
        let two_pi = T::lit(std::f64::consts::TAU);
        let freqs: Vec<T> = (0..feats)
            .map(|i| two_pi / temperature.powf(T::from_usize(2 * (i / 2)).unwrap() / T::from_usize(feats).unwrap()))
            .collect();
        let cv = self.value(coords);
        let mut out = Vec::with_capacity(cv.len() * feats);
        for &c in cv {
            for (i, &f) in freqs.iter().enumerate() {
                let ang = c * f;
                out.push(if i % 2 == 0 { ang.sin() } else { ang.cos() });
            }
        }
        let out_shape = vec![shape[0], shape[1] * feats];
        Ok(self.push(out_shape, out, &[coords], move |cx, g| {
            let (cv, go) = (cx.value(coords), cx.grad());
            if let Some(gc) = g.slot(coords) {
                for (ci, &c) in cv.iter().enumerate() {
                    let mut acc = T::zero();
                    for (i, &f) in freqs.iter().enumerate() {
                        let ang = c * f;
                        let d = if i % 2 == 0 { ang.cos() * f } else { -ang.sin() * f };
                        acc += go[ci * feats + i] * d;
                    }
                    gc[ci] += acc;
                }
            }
        }))
    }

    /// Unfolds `[H, W, C]` into `[Ho·Wo, k·k·C]` patches (zero padded), the
    /// left operand of a convolution written as a matrix product.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || kernel == 0 || stride == 0 || s[0] + 2 * pad < kernel || s[1] + 2 * pad < kernel {
            return Err(shape_err("im2col", format!("input {:?}, kernel {kernel}, stride {stride}", s)));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let ho = (h + 2 * pad - kernel) / stride + 1;
        let wo = (w + 2 * pad - kernel) / stride + 1;
        let cols = kernel * kernel * c;
        // source offset per output entry, usize::MAX for padding
        let mut src = Vec::with_capacity(ho * wo * cols);
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                        for ch in 0..c {
                            src.push(if inside { (iy as usize * w + ix as usize) * c + ch } else { usize::MAX });
                        }
                    }
                }
            }
        }
        let xv = self.value(x);
        let out: Vec<T> = src.iter().map(|&i| if i == usize::MAX { T::zero() } else { xv[i] }).collect();
        Ok(self.push(vec![ho * wo, cols], out, &[x], move |cx, g| {
            if let Some(gx) = g.slot(x) {
                for (o, &i) in src.iter().enumerate() {
                    if i != usize::MAX {
                        gx[i] += cx.grad()[o];
                    }
                }
            }
        }))
    }
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    if max == T::neg_infinity() {
        return max;
    }
    max + row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp()).ln()
}
