use super::tape::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Row-major strides for an `rows × cols` matrix, or for its transpose
/// when the buffer actually stores `cols × rows`.
fn view(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

impl<T: Scalar> Tape<T> {
    /// `[M,K] × [K,N] → [M,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{:?} × {:?}", sa, sb)));
        }
        let a3 = self.reshape(a, &[1, sa[0], sa[1]])?;
        let b3 = self.reshape(b, &[1, sb[0], sb[1]])?;
        let c = self.bmm(a3, b3, false, false)?;
        self.reshape(c, &[sa[0], sb[1]])
    }

    /// Batched product over a leading batch axis, with optional transposes
    /// of the trailing two axes of each operand.
    pub fn bmm(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("bmm", format!("{:?} × {:?}", sa, sb)));
        }
        let batch = sa[0];
        let (m, ka) = if trans_a { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if ka != kb {
            return Err(shape_err(
                "bmm",
                format!("{:?}{} × {:?}{}", sa, if trans_a { "ᵀ" } else { "" }, sb, if trans_b { "ᵀ" } else { "" }),
            ));
        }
        let k = ka;
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(a), self.value(b));
            for i in 0..batch {
                T::gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..],
                    view(m, k, trans_a),
                    &bv[i * k * n..],
                    view(k, n, trans_b),
                    &mut out[i * m * n..],
                    (n as isize, 1),
                    false,
                );
            }
        }
        Ok(self.push(vec![batch, m, n], out, &[a, b], move |cx, g| {
            let go = cx.grad();
            if let Some(ga) = g.slot(a) {
                let bv = cx.value(b);
                for i in 0..batch {
                    // dA = dC · Bᵀ, written in A's storage layout
                    let strides = if trans_a { (1isize, m as isize) } else { (k as isize, 1isize) };
                    let dst = &mut ga[i * m * k..];
                    let bt = view(k, n, trans_b);
                    T::gemm(m, n, k, &go[i * m * n..], (n as isize, 1), &bv[i * k * n..], (bt.1, bt.0), dst, strides, true);
                }
            }
            if let Some(gb) = g.slot(b) {
                let av = cx.value(a);
                for i in 0..batch {
                    // dB = Aᵀ · dC
                    let strides = if trans_b { (1isize, k as isize) } else { (n as isize, 1isize) };
                    let at = view(m, k, trans_a);
                    T::gemm(k, m, n, &av[i * m * k..], (at.1, at.0), &go[i * m * n..], (n as isize, 1), &mut gb[i * k * n..], strides, true);
                }
            }
        }))
    }

    /// Affine map over the last axis: `x · w + bias` with `w: [in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let fan_in = *sx.last().ok_or_else(|| shape_err("linear", "scalar input"))?;
        if sw.len() != 2 || sw[0] != fan_in {
            return Err(shape_err("linear", format!("input {:?} with weight {:?}", sx, sw)));
        }
        let fan_out = sw[1];
        if let Some(b) = bias {
            if self.shape(b) != [fan_out] {
                return Err(shape_err("linear", format!("bias {:?} for {fan_out} outputs", self.shape(b))));
            }
        }
        let rows = self.value(x).len() / fan_in.max(1);
        let mut out = vec![T::zero(); rows * fan_out];
        if let Some(b) = bias {
            let bv = self.value(b);
            out.chunks_mut(fan_out).for_each(|r| r.copy_from_slice(bv));
        }
        T::gemm(
            rows,
            fan_in,
            fan_out,
            self.value(x),
            (fan_in as isize, 1),
            self.value(w),
            (fan_out as isize, 1),
            &mut out,
            (fan_out as isize, 1),
            bias.is_some(),
        );
        let mut shape = sx.clone();
        *shape.last_mut().unwrap() = fan_out;
        let inputs: Vec<Var> = [Some(x), Some(w), bias].into_iter().flatten().collect();
        Ok(self.push(shape, out, &inputs, move |cx, g| {
            let go = cx.grad();
            if let Some(gx) = g.slot(x) {
                let wv = cx.value(w);
                T::gemm(rows, fan_out, fan_in, go, (fan_out as isize, 1), wv, (1, fan_out as isize), gx, (fan_in as isize, 1), true);
            }
            if let Some(gw) = g.slot(w) {
                let xv = cx.value(x);
                T::gemm(fan_in, rows, fan_out, xv, (1, fan_in as isize), go, (fan_out as isize, 1), gw, (fan_out as isize, 1), true);
            }
            if let Some(b) = bias {
                if let Some(gb) = g.slot(b) {
                    for r in go.chunks(fan_out) {
                        gb.iter_mut().zip(r).for_each(|(d, &s)| *d += s);
                    }
                }
            }
        }))
    }
}
