//! Parameterized building blocks. Each holds [`ParamId`]s into a
//! [`ParamStore`] and acts on a tape whose first leaves are that store.

use crate::diffmath::{param, LevelLayout, ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let w = store.kaiming_uniform(format!("{name}.w"), &[d_in, d_out], d_in, 1.0 / 3f64.sqrt(), rng);
        let bound = 1.0 / (d_in as f64).sqrt();
        let b = Some(store.uniform(format!("{name}.b"), &[d_out], bound, rng));
        Self { w, b, d_in, d_out }
    }

    pub fn without_bias<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let w = store.kaiming_uniform(format!("{name}.w"), &[d_in, d_out], d_in, 1.0 / 3f64.sqrt(), rng);
        Self { w, b: None, d_in, d_out }
    }

    /// Weights and bias start at zero.
    pub fn zeroed<T: Scalar>(store: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = store.zeros(format!("{name}.w"), &[d_in, d_out]);
        let b = Some(store.zeros(format!("{name}.b"), &[d_out]));
        Self { w, b, d_in, d_out }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.linear(x, param(self.w), self.b.map(param))
    }
}

/// Linear layers with ReLU between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`; the last layer is zero-initialized when
    /// `zero_last` is set.
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, dims: &[usize], zero_last: bool, rng: &mut R) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let nm = format!("{name}.{i}");
                if zero_last && i + 1 == n {
                    Linear::zeroed(store, &nm, dims[i], dims[i + 1])
                } else {
                    Linear::new(store, &nm, dims[i], dims[i + 1], rng)
                }
            })
            .collect();
        Self { layers }
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("mlp has layers")
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        Self {
            gamma: store.filled(format!("{name}.gamma"), &[d], T::one()),
            beta: store.zeros(format!("{name}.beta"), &[d]),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.layer_norm(x, param(self.gamma), param(self.beta), T::lit(1e-5))
    }
}

/// Two-layer feed-forward block.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub mlp: Mlp,
}

impl FeedForward {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, d: usize, hidden: usize, rng: &mut R) -> Self {
        Self { mlp: Mlp::new(store, name, &[d, hidden, d], false, rng) }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.mlp.forward(tape, x)
    }
}

/// Multi-head scaled dot-product attention over `[B, T, d]` sequences.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            // a key bias only shifts each score row, which softmax ignores
            k: Linear::without_bias(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            out: Linear::new(store, &format!("{name}.out"), d, d, rng),
            heads,
        }
    }

    /// `[B, T, d] → [B·heads, T, d/heads]`.
    fn split<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let dh = s[2] / self.heads;
        let x = tape.reshape(x, &[s[0], s[1], self.heads, dh])?;
        let x = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(x, &[s[0] * self.heads, s[1], dh])
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, query: Var, key: Var, value: Var) -> Result<Var> {
        let s = tape.shape(query).to_vec();
        let (b, t, d) = (s[0], s[1], s[2]);
        let dh = d / self.heads;
        let q = self.q.forward(tape, query)?;
        let q = self.split(tape, q)?;
        let k = self.k.forward(tape, key)?;
        let k = self.split(tape, k)?;
        let v = self.v.forward(tape, value)?;
        let v = self.split(tape, v)?;
        let scores = tape.bmm(q, k, false, true)?;
        let scores = tape.scale(scores, T::one() / T::lit(dh as f64).sqrt());
        let attn = tape.softmax(scores)?;
        let ctx = tape.bmm(attn, v, false, false)?;
        let ctx = tape.reshape(ctx, &[b, self.heads, t, dh])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, t, d])?;
        self.out.forward(tape, ctx)
    }
}

/// Multi-scale deformable attention: each query samples a few bilinear
/// locations per head and level around its reference point.
#[derive(Debug, Clone)]
pub struct DeformableAttention {
    pub offsets: Linear,
    pub weights: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
    pub levels: usize,
    pub points: usize,
}

impl DeformableAttention {
    /// Offsets start on a fixed star pattern, one direction per head with
    /// radius growing by point index; attention starts uniform.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        levels: usize,
        points: usize,
        rng: &mut R,
    ) -> Self {
        let offsets = Linear::zeroed(store, &format!("{name}.offsets"), d, heads * levels * points * 2);
        let mut bias = Vec::with_capacity(heads * levels * points * 2);
        for h in 0..heads {
            let theta = std::f64::consts::TAU * h as f64 / heads as f64;
            let (c, s) = (theta.cos(), theta.sin());
            let m = c.abs().max(s.abs());
            for _ in 0..levels {
                for p in 0..points {
                    let r = (p + 1) as f64;
                    bias.push(T::lit(c / m * r));
                    bias.push(T::lit(s / m * r));
                }
            }
        }
        store.get_mut(offsets.b.expect("zeroed layers have a bias")).data = bias;
        Self {
            offsets,
            weights: Linear::zeroed(store, &format!("{name}.weights"), d, heads * levels * points),
            value: Linear::new(store, &format!("{name}.value"), d, d, rng),
            out: Linear::new(store, &format!("{name}.out"), d, d, rng),
            heads,
            levels,
            points,
        }
    }

    /// Sampling locations `[Q, heads, levels, points, 2]` and softmax
    /// weights `[Q, heads, levels, points]` for queries `[Q, d]` with
    /// reference points `reference` (`Q × 2`, normalized).
    pub fn sampling<T: Scalar>(&self, tape: &mut Tape<T>, query: Var, reference: &[T], layout: &LevelLayout) -> Result<(Var, Var)> {
        let q = tape.shape(query)[0];
        let (h, l, p) = (self.heads, self.levels, self.points);
        let off = self.offsets.forward(tape, query)?;
        let off = tape.reshape(off, &[q, h, l, p, 2])?;
        // one offset unit is one pixel of the sampled level
        let scale: Vec<T> = layout
            .sizes
            .iter()
            .flat_map(|&(lh, lw)| (0..p).flat_map(move |_| [T::one() / T::lit(lw as f64), T::one() / T::lit(lh as f64)]))
            .collect();
        let scale = tape.constant_from(&[l, p, 2], scale)?;
        let off = tape.mul(off, scale)?;
        let refs: Vec<T> = (0..q).flat_map(|i| (0..h * l * p).flat_map(move |_| [reference[2 * i], reference[2 * i + 1]])).collect();
        let refs = tape.constant_from(&[q, h, l, p, 2], refs)?;
        let locations = tape.add(refs, off)?;
        let w = self.weights.forward(tape, query)?;
        let w = tape.reshape(w, &[q * h, l * p])?;
        let w = tape.softmax(w)?;
        let w = tape.reshape(w, &[q, h, l, p])?;
        Ok((locations, w))
    }

    /// `value_mask` (`[S, d]`, zeros on padding) is applied after projection.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        query: Var,
        reference: &[T],
        memory: Var,
        layout: &LevelLayout,
        value_mask: Option<Var>,
    ) -> Result<Var> {
        let (locations, weights) = self.sampling(tape, query, reference, layout)?;
        let s = tape.shape(memory).to_vec();
        let mut v = self.value.forward(tape, memory)?;
        if let Some(mask) = value_mask {
            v = tape.mul(v, mask)?;
        }
        let v = tape.reshape(v, &[s[0], self.heads, s[1] / self.heads])?;
        let out = tape.deformable_attention(v, layout, locations, weights)?;
        self.out.forward(tape, out)
    }
}
