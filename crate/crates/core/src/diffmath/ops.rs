//! Elementwise, reduction and shape ops.

use super::tape::{Tape, Var};
use super::tensor::numel;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// `b` may broadcast onto `a` when its shape is a suffix of `a`'s shape.
fn suffix_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        Ok(())
    } else {
        Err(shape_err(op, format!("{:?} cannot broadcast onto {:?}", b, a)))
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        suffix_broadcast(name, &sa, &sb)?;
        let (av, bv) = (self.value(a), self.value(b));
        let nb = bv.len();
        let out: Vec<T> = av
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bv[i % nb];
                match op {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        Ok(self.push(sa, out, &[a, b], move |cx, g| {
            let go = cx.grad();
            if let Some(ga) = g.slot(a) {
                match op {
                    Binary::Add | Binary::Sub => ga.iter_mut().zip(go).for_each(|(d, &s)| *d += s),
                    Binary::Mul => {
                        let bv = cx.value(b);
                        for (i, (d, &s)) in ga.iter_mut().zip(go).enumerate() {
                            *d += s * bv[i % nb];
                        }
                    }
                }
            }
            if let Some(gb) = g.slot(b) {
                let av = cx.value(a);
                for (i, &s) in go.iter().enumerate() {
                    let j = i % nb;
                    match op {
                        Binary::Add => gb[j] += s,
                        Binary::Sub => gb[j] -= s,
                        Binary::Mul => gb[j] += s * av[i],
                    }
                }
            }
        }))
    }

    /// `a + b`, with `b` broadcast over `a`'s leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, &[a], move |cx, g| {
            if let Some(ga) = g.slot(a) {
                ga.iter_mut().zip(cx.grad()).for_each(|(d, &s_)| *d += s_ * s);
            }
        })
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).iter().map(|&x| x + s).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, &[a], move |cx, g| {
            if let Some(ga) = g.slot(a) {
                ga.iter_mut().zip(cx.grad()).for_each(|(d, &s_)| *d += s_);
            }
        })
    }

    /// Shared implementation of pointwise maps whose derivative is a
    /// function of the input `x` and output `y`.
    fn unary<F, D>(&mut self, a: Var, f: F, df: D) -> Var
    where
        F: Fn(T) -> T,
        D: Fn(T, T) -> T + 'static,
    {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, &[a], move |cx, g| {
            let (xs, ys, go) = (cx.value(a), cx.out_value(), cx.grad());
            if let Some(ga) = g.slot(a) {
                for i in 0..ga.len() {
                    ga[i] += go[i] * df(xs[i], ys[i]);
                }
            }
        })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y| y * (T::one() - y))
    }

    /// Inverse sigmoid with inputs clamped to `[eps, 1 - eps]`. The clamped
    /// region has zero gradient.
    pub fn logit(&mut self, a: Var, eps: T) -> Var {
        let hi = T::one() - eps;
        self.unary(
            a,
            move |x| logit(x, eps),
            move |x, _| {
                if x < eps || x > hi {
                    T::zero()
                } else {
                    T::one() / (x * (T::one() - x))
                }
            },
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), |_, y| y)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), |x, _| if x > T::zero() { T::one() } else if x < T::zero() { -T::one() } else { T::zero() })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().fold(T::zero(), |acc, &x| acc + x);
        self.push(vec![], vec![s], &[a], move |cx, g| {
            let go = cx.grad()[0];
            if let Some(ga) = g.slot(a) {
                ga.iter_mut().for_each(|d| *d += go);
            }
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).len().max(1)).unwrap();
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// Sum of all entries of `a` weighted by a constant buffer of equal length.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<T>) -> Result<Var> {
        if weights.len() != self.value(a).len() {
            return Err(shape_err("weighted_sum", format!("{} weights for {} values", weights.len(), self.value(a).len())));
        }
        let s = self.value(a).iter().zip(&weights).fold(T::zero(), |acc, (&x, &w)| acc + x * w);
        Ok(self.push(vec![], vec![s], &[a], move |cx, g| {
            let go = cx.grad()[0];
            if let Some(ga) = g.slot(a) {
                ga.iter_mut().zip(&weights).for_each(|(d, &w)| *d += go * w);
            }
        }))
    }

    /// Sum of several scalars (or equal-shaped tensors).
    pub fn add_n(&mut self, items: &[Var]) -> Result<Var> {
        let mut it = items.iter();
        let first = *it.next().ok_or_else(|| shape_err("add_n", "no inputs"))?;
        let mut acc = first;
        for &v in it {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).len() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", self.shape(a), shape)));
        }
        let out = self.value(a).to_vec();
        Ok(self.push(shape.to_vec(), out, &[a], move |cx, g| {
            if let Some(ga) = g.slot(a) {
                ga.iter_mut().zip(cx.grad()).for_each(|(d, &s)| *d += s);
            }
        }))
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&ax| ax >= rank || std::mem::replace(&mut seen[ax], true)) {
            return Err(shape_err("permute", format!("axes {:?} for shape {:?}", axes, shape)));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let in_strides = strides(&shape);
        // stride in the input for each output axis
        let mapped: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
        let index = permuted_offsets(&out_shape, &mapped);
        let src = self.value(a);
        let out: Vec<T> = index.iter().map(|&i| src[i]).collect();
        Ok(self.push(out_shape, out, &[a], move |cx, g| {
            if let Some(ga) = g.slot(a) {
                for (o, &i) in index.iter().enumerate() {
                    ga[i] += cx.grad()[o];
                }
            }
        }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(shape_err("transpose", format!("rank {rank}")));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(a, &axes)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} for rank {}", first.len())));
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(shape_err("concat", format!("{:?} vs {:?} along axis {axis}", s, first)));
            }
            widths.push(s[axis] * inner);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total / inner;
        let parts = parts.to_vec();
        Ok(self.push(shape, out, &parts.clone(), move |cx, g| {
            let go = cx.grad();
            let mut off = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                if let Some(gp) = g.slot(p) {
                    for o in 0..outer {
                        let base = o * total + off;
                        gp[o * w..(o + 1) * w]
                            .iter_mut()
                            .zip(&go[base..base + w])
                            .for_each(|(d, &s)| *d += s);
                    }
                }
                off += w;
            }
        }))
    }

    /// Contiguous range `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..end).collect();
        let shape = self.shape(a);
        if axis >= shape.len() || end > shape[axis] || start > end {
            return Err(shape_err("slice", format!("{start}..{end} on axis {axis} of {:?}", shape)));
        }
        self.index_select(a, axis, &idx)
    }

    /// Gathers entries `indices` (repeats allowed) along `axis`.
    pub fn index_select(&mut self, a: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || indices.iter().any(|&i| i >= shape[axis]) {
            return Err(shape_err("index_select", format!("indices {:?} on axis {axis} of {:?}", indices, shape)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let src = self.value(a);
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * dim + i) * inner;
                out.extend_from_slice(&src[base..base + inner]);
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = indices.len();
        let indices = indices.to_vec();
        Ok(self.push(out_shape, out, &[a], move |cx, g| {
            let go = cx.grad();
            if let Some(ga) = g.slot(a) {
                let mut k = 0;
                for o in 0..outer {
                    for &i in &indices {
                        let base = (o * dim + i) * inner;
                        ga[base..base + inner]
                            .iter_mut()
                            .zip(&go[k..k + inner])
                            .for_each(|(d, &s)| *d += s);
                        k += inner;
                    }
                }
            }
        }))
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse sigmoid with the input clamped to `[eps, 1 - eps]`.
pub fn logit<T: Scalar>(x: T, eps: T) -> T {
    let x = x.max(eps).min(T::one() - eps);
    (x / (T::one() - x)).ln()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permuted_offsets(out_shape: &[usize], in_strides: &[usize]) -> Vec<usize> {
    let n = numel(out_shape);
    let mut offsets = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut counter = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        offsets.push(off);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            off += in_strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            off -= in_strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    offsets
}
