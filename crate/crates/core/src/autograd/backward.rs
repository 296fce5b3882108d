//! Vector-Jacobian products, one arm per [`Op`].

use super::ops::{same_padding, transpose};
use super::{Graph, Op, Var};
use crate::tensor::Scalar;

impl<'a, T: Scalar> Graph<'a, T> {
    fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.numel()
    }

    /// Runs `f` on the gradient buffer of `v` if `v` takes gradients.
    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [T], &Self)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let numel = self.numel(v);
        let mut buf = self.grads[v.0]
            .take()
            .unwrap_or_else(|| vec![T::zero(); numel]);
        f(&mut buf, self);
        self.grads[v.0] = Some(buf);
    }

    fn accumulate_elementwise(&mut self, v: Var, g: &[T], local: impl Fn(usize) -> T) {
        self.accumulate(v, |buf, _| {
            for (i, (b, &gi)) in buf.iter_mut().zip(g).enumerate() {
                *b = *b + gi * local(i);
            }
        });
    }

    /// Elementwise accumulation whose local derivative reads the value of
    /// another node.
    fn accumulate_with(&mut self, v: Var, g: &[T], source: Var, local: impl Fn(usize, T) -> T) {
        self.accumulate(v, |buf, gr| {
            let src = gr.value(source).data();
            for (i, ((b, &gi), &s)) in buf.iter_mut().zip(g).zip(src).enumerate() {
                *b = *b + gi * local(i, s);
            }
        });
    }

    pub(super) fn backprop_node(&mut self, id: usize, g: &[T]) {
        // The op is cloned out so the tape can be borrowed mutably below;
        // payloads are small except for index lists.
        let op = self.nodes[id].op.clone();
        let out = Var(id);
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (p, q) = self.value(a).dims2().expect("checked in forward");
                let r = self.numel(b) / q;
                self.accumulate(a, |buf, gr| {
                    let bd = gr.value(b).data();
                    for i in 0..p {
                        let gi = &g[i * r..(i + 1) * r];
                        for k in 0..q {
                            let bk = &bd[k * r..(k + 1) * r];
                            buf[i * q + k] =
                                buf[i * q + k] + gi.iter().zip(bk).map(|(&x, &y)| x * y).sum::<T>();
                        }
                    }
                });
                self.accumulate(b, |buf, gr| {
                    let ad = gr.value(a).data();
                    for i in 0..p {
                        let gi = &g[i * r..(i + 1) * r];
                        for k in 0..q {
                            let aik = ad[i * q + k];
                            for (bb, &gv) in buf[k * r..(k + 1) * r].iter_mut().zip(gi) {
                                *bb = *bb + aik * gv;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate_elementwise(a, g, |_| T::one());
                self.accumulate_elementwise(b, g, |_| T::one());
            }
            Op::AddColBias(x, bias) => {
                self.accumulate_elementwise(x, g, |_| T::one());
                let rows = self.numel(bias);
                let cols = g.len() / rows;
                self.accumulate(bias, |buf, _| {
                    for (b, row) in buf.iter_mut().zip(g.chunks(cols)) {
                        *b = *b + row.iter().copied().sum::<T>();
                    }
                });
            }
            Op::Mul(a, b) => {
                self.accumulate_with(a, g, b, |_, other| other);
                self.accumulate_with(b, g, a, |_, other| other);
            }
            Op::MulConst(x, mask) => self.accumulate_elementwise(x, g, |i| mask[i]),
            Op::Sigmoid(x) => self.accumulate_with(x, g, out, |_, y| y * (T::one() - y)),
            Op::Relu(x) => {
                self.accumulate_with(
                    x,
                    g,
                    x,
                    |_, v| {
                        if v > T::zero() {
                            T::one()
                        } else {
                            T::zero()
                        }
                    },
                )
            }
            Op::Tanh(x) => self.accumulate_with(x, g, out, |_, y| T::one() - y * y),
            Op::Valve(x, open) => {
                self.accumulate_elementwise(x, g, |i| if open[i] { T::one() } else { T::zero() })
            }
            Op::SoftmaxRows(x) => {
                let cols = *self.value(out).shape().last().expect("rank ≥ 1");
                self.accumulate(x, |buf, gr| {
                    let y = gr.value(out).data();
                    for ((b, yr), gr) in
                        buf.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols))
                    {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((bi, &yi), &gi) in b.iter_mut().zip(yr).zip(gr) {
                            *bi = *bi + yi * (gi - dot);
                        }
                    }
                });
            }
            Op::Sum(x) => self.accumulate(x, |buf, _| {
                for b in buf {
                    *b = *b + g[0];
                }
            }),
            Op::SumCols(x) => {
                let cols = self.numel(x) / g.len();
                self.accumulate(x, |buf, _| {
                    for (row, &gr) in buf.chunks_mut(cols).zip(g) {
                        for b in row {
                            *b = *b + gr;
                        }
                    }
                });
            }
            Op::Mean(xs) => {
                let share = g[0] / T::from_f64(xs.len() as f64);
                for x in xs {
                    self.accumulate(x, |buf, _| buf[0] = buf[0] + share);
                }
            }
            Op::Conv1dSame {
                x,
                filters,
                bias,
                window,
            } => self.backprop_conv(g, x, filters, bias, window),
            Op::Embed { table, indices } => {
                let m = indices.len();
                self.accumulate(table, |buf, gr| {
                    let k = gr.value(table).shape()[1];
                    for (j, &idx) in indices.iter().enumerate() {
                        for q in 0..k {
                            buf[idx * k + q] = buf[idx * k + q] + g[q * m + j];
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                self.accumulate(logits, |buf, _| {
                    for (i, (b, &p)) in buf.iter_mut().zip(&probs).enumerate() {
                        let target = if i == label { T::one() } else { T::zero() };
                        *b = *b + g[0] * (p - target);
                    }
                });
            }
            Op::Column(x, t) => {
                let cols = self.value(x).shape()[1];
                self.accumulate(x, |buf, _| {
                    for (r, &gr) in g.iter().enumerate() {
                        buf[r * cols + t] = buf[r * cols + t] + gr;
                    }
                });
            }
            Op::StackColumns(cols) => {
                let m = cols.len();
                for (t, c) in cols.into_iter().enumerate() {
                    self.accumulate(c, |buf, _| {
                        for (r, b) in buf.iter_mut().enumerate() {
                            *b = *b + g[r * m + t];
                        }
                    });
                }
            }
            Op::Slice(x, start) => {
                self.accumulate(x, |buf, _| {
                    for (b, &gi) in buf[start..start + g.len()].iter_mut().zip(g) {
                        *b = *b + gi;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.numel(p);
                    self.accumulate_elementwise(p, &g[offset..offset + n], |_| T::one());
                    offset += n;
                }
            }
        }
    }

    fn backprop_conv(&mut self, g: &[T], x: Var, filters: Var, bias: Var, window: usize) {
        let (k, m) = self.value(x).dims2().expect("checked in forward");
        let (n, span) = self.value(filters).dims2().expect("checked in forward");
        let (left, _) = same_padding(window);
        // Valid input column for output position i and filter row r.
        let col_of = move |i: usize, r: usize| (i + r).checked_sub(left).filter(|&j| j < m);

        self.accumulate(bias, |buf, _| {
            for (b, row) in buf.iter_mut().zip(g.chunks(m)) {
                *b = *b + row.iter().copied().sum::<T>();
            }
        });
        self.accumulate(filters, |buf, gr| {
            let xt = transpose(gr.value(x).data(), k, m);
            for f in 0..n {
                let gf = &g[f * m..(f + 1) * m];
                let fb = &mut buf[f * span..(f + 1) * span];
                for (i, &gi) in gf.iter().enumerate() {
                    for r in 0..window {
                        let Some(j) = col_of(i, r) else { continue };
                        for (w, &xv) in fb[r * k..(r + 1) * k]
                            .iter_mut()
                            .zip(&xt[j * k..(j + 1) * k])
                        {
                            *w = *w + gi * xv;
                        }
                    }
                }
            }
        });
        self.accumulate(x, |buf, gr| {
            let fd = gr.value(filters).data();
            let mut gxt = vec![T::zero(); k * m];
            for f in 0..n {
                let filt = &fd[f * span..(f + 1) * span];
                for i in 0..m {
                    let gi = g[f * m + i];
                    for r in 0..window {
                        let Some(j) = col_of(i, r) else { continue };
                        for (o, &w) in gxt[j * k..(j + 1) * k]
                            .iter_mut()
                            .zip(&filt[r * k..(r + 1) * k])
                        {
                            *o = *o + gi * w;
                        }
                    }
                }
            }
            for (j, col) in gxt.chunks(k).enumerate() {
                for (q, &v) in col.iter().enumerate() {
                    buf[q * m + j] = buf[q * m + j] + v;
                }
            }
        });
    }
}
