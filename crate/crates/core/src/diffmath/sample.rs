//! Bilinear feature sampling and multi-scale deformable attention.
//!
//! Locations are normalized with pixel centers at `((j + 0.5) / W, (i + 0.5) / H)`;
//! taps falling outside the map read zeros.

use super::tape::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// One of the four interpolation taps: flat cell index (or `None` when
/// outside the map), its weight, and the weight's derivatives w.r.t. the
/// normalized x and y location.
#[derive(Clone, Copy)]
pub(crate) struct Tap<T> {
    pub cell: Option<usize>,
    pub w: T,
    pub dwx: T,
    pub dwy: T,
}

pub(crate) fn taps<T: Scalar>(x: T, y: T, height: usize, width: usize) -> [Tap<T>; 4] {
    let (wf, hf) = (T::from_usize(width).unwrap(), T::from_usize(height).unwrap());
    let half = T::lit(0.5);
    let px = x * wf - half;
    let py = y * hf - half;
    let (x0, y0) = (px.floor(), py.floor());
    let (fx, fy) = (px - x0, py - y0);
    let (x0, y0) = (x0.to_isize().unwrap_or(isize::MIN / 2), y0.to_isize().unwrap_or(isize::MIN / 2));
    let one = T::one();
    let cell = |cy: isize, cx: isize| {
        (cy >= 0 && cx >= 0 && (cy as usize) < height && (cx as usize) < width).then(|| cy as usize * width + cx as usize)
    };
    [
        Tap { cell: cell(y0, x0), w: (one - fx) * (one - fy), dwx: -(one - fy) * wf, dwy: -(one - fx) * hf },
        Tap { cell: cell(y0, x0 + 1), w: fx * (one - fy), dwx: (one - fy) * wf, dwy: -fx * hf },
        Tap { cell: cell(y0 + 1, x0), w: (one - fx) * fy, dwx: -fy * wf, dwy: (one - fx) * hf },
        Tap { cell: cell(y0 + 1, x0 + 1), w: fx * fy, dwx: fy * wf, dwy: fx * hf },
    ]
}

/// Spatial layout of the flattened multi-level value tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelLayout {
    pub sizes: Vec<(usize, usize)>,
    pub starts: Vec<usize>,
}

impl LevelLayout {
    pub fn new(sizes: Vec<(usize, usize)>) -> Self {
        let mut starts = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &(h, w) in &sizes {
            starts.push(acc);
            acc += h * w;
        }
        Self { sizes, starts }
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().map(|(h, w)| h * w).sum()
    }

    pub fn levels(&self) -> usize {
        self.sizes.len()
    }
}

impl<T: Scalar> Tape<T> {
    /// Bilinear read of `feature_map: [H, W, C]` at `location: [2]` (x, y).
    pub fn bilinear_sample(&mut self, feature_map: Var, location: Var) -> Result<Var> {
        let fs = self.shape(feature_map).to_vec();
        if fs.len() != 3 || self.shape(location) != [2] {
            return Err(shape_err(
                "bilinear_sample",
                format!("map {:?}, location {:?}", fs, self.shape(location)),
            ));
        }
        let (h, w, c) = (fs[0], fs[1], fs[2]);
        let (lx, ly) = (self.value(location)[0], self.value(location)[1]);
        let tp = taps(lx, ly, h, w);
        let fv = self.value(feature_map);
        let mut out = vec![T::zero(); c];
        for t in tp.iter() {
            if let Some(cell) = t.cell {
                for ch in 0..c {
                    out[ch] += t.w * fv[cell * c + ch];
                }
            }
        }
        Ok(self.push(vec![c], out, &[feature_map, location], move |cx, g| {
            let go = cx.grad();
            if let Some(gf) = g.slot(feature_map) {
                for t in tp.iter() {
                    if let Some(cell) = t.cell {
                        for ch in 0..c {
                            gf[cell * c + ch] += t.w * go[ch];
                        }
                    }
                }
            }
            if g.wants(location) {
                let fv = cx.value(feature_map);
                let (mut dx, mut dy) = (T::zero(), T::zero());
                for t in tp.iter() {
                    if let Some(cell) = t.cell {
                        let dot = (0..c).fold(T::zero(), |acc, ch| acc + go[ch] * fv[cell * c + ch]);
                        dx += t.dwx * dot;
                        dy += t.dwy * dot;
                    }
                }
                let gl = g.slot(location).unwrap();
                gl[0] += dx;
                gl[1] += dy;
            }
        }))
    }

    /// Multi-scale deformable attention core.
    ///
    /// * `value`: `[S, heads, head_dim]`, levels flattened row-major per `layout`
    /// * `locations`: `[Q, heads, levels, points, 2]` normalized (x, y)
    /// * `weights`: `[Q, heads, levels, points]`
    ///
    /// Returns `[Q, heads · head_dim]` with
    /// `out[q, h] = Σ_{l,p} weights[q,h,l,p] · sample(value_l[·, h], locations[q,h,l,p])`.
    pub fn deformable_attention(&mut self, value: Var, layout: &LevelLayout, locations: Var, weights: Var) -> Result<Var> {
        let vs = self.shape(value).to_vec();
        let ls = self.shape(locations).to_vec();
        let ws = self.shape(weights).to_vec();
        let levels = layout.levels();
        if vs.len() != 3
            || vs[0] != layout.total()
            || ls.len() != 5
            || ls[4] != 2
            || ls[1] != vs[1]
            || ls[2] != levels
            || ws != ls[..4]
        {
            return Err(shape_err(
                "deformable_attention",
                format!("value {:?} (layout {:?}), locations {:?}, weights {:?}", vs, layout.sizes, ls, ws),
            ));
        }
        let (heads, dh) = (vs[1], vs[2]);
        let (queries, points) = (ls[0], ls[3]);
        let layout = layout.clone();
        let vv = self.value(value);
        let lv = self.value(locations);
        let wv = self.value(weights);
        let mut out = vec![T::zero(); queries * heads * dh];
        for q in 0..queries {
            for h in 0..heads {
                let o = &mut out[(q * heads + h) * dh..(q * heads + h + 1) * dh];
                for l in 0..levels {
                    let (lh, lw) = layout.sizes[l];
                    let start = layout.starts[l];
                    for p in 0..points {
                        let s = ((q * heads + h) * levels + l) * points + p;
                        let a = wv[s];
                        for t in taps(lv[2 * s], lv[2 * s + 1], lh, lw) {
                            if let Some(cell) = t.cell {
                                let coef = a * t.w;
                                let base = ((start + cell) * heads + h) * dh;
                                for (oc, &v) in o.iter_mut().zip(&vv[base..base + dh]) {
                                    *oc += coef * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(vec![queries, heads * dh], out, &[value, locations, weights], move |cx, g| {
            let go = cx.grad();
            let vv = cx.value(value);
            let lv = cx.value(locations);
            let wv = cx.value(weights);
            let (want_v, want_l, want_w) = (g.wants(value), g.wants(locations), g.wants(weights));
            let mut gv = want_v.then(|| vec![T::zero(); vv.len()]);
            let mut gl = want_l.then(|| vec![T::zero(); lv.len()]);
            let mut gw = want_w.then(|| vec![T::zero(); wv.len()]);
            for q in 0..queries {
                for h in 0..heads {
                    let gq = &go[(q * heads + h) * dh..(q * heads + h + 1) * dh];
                    for l in 0..levels {
                        let (lh, lw) = layout.sizes[l];
                        let start = layout.starts[l];
                        for p in 0..points {
                            let s = ((q * heads + h) * levels + l) * points + p;
                            let a = wv[s];
                            let (mut sampled_dot, mut dx, mut dy) = (T::zero(), T::zero(), T::zero());
                            for t in taps(lv[2 * s], lv[2 * s + 1], lh, lw) {
                                if let Some(cell) = t.cell {
                                    let base = ((start + cell) * heads + h) * dh;
                                    let vrow = &vv[base..base + dh];
                                    let dot = vrow.iter().zip(gq).fold(T::zero(), |acc, (&v, &gg)| acc + v * gg);
                                    sampled_dot += t.w * dot;
                                    dx += t.dwx * dot;
                                    dy += t.dwy * dot;
                                    if let Some(gv) = gv.as_mut() {
                                        let coef = a * t.w;
                                        for (d, &gg) in gv[base..base + dh].iter_mut().zip(gq) {
                                            *d += coef * gg;
                                        }
                                    }
                                }
                            }
                            if let Some(gw) = gw.as_mut() {
                                gw[s] += sampled_dot;
                            }
                            if let Some(gl) = gl.as_mut() {
                                gl[2 * s] += a * dx;
                                gl[2 * s + 1] += a * dy;
                            }
                        }
                    }
                }
            }
            for (var, buf) in [(value, gv), (locations, gl), (weights, gw)] {
                if let (Some(buf), Some(slot)) = (buf, g.slot(var)) {
                    slot.iter_mut().zip(buf).for_each(|(d, s)| *d += s);
                }
            }
        }))
    }
}
