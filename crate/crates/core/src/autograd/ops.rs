//! Forward definitions of every differentiable primitive.

use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Left/right zero padding that keeps a same-length convolution output.
pub fn same_padding(window: usize) -> (usize, usize) {
    let left = window / 2;
    (left, window - 1 - left)
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<'a, T: Scalar> Graph<'a, T> {
    /// Matrix product `[p×q]·[q×r] → [p×r]`, or matrix-vector product when
    /// `b` is a vector `[q] → [p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (p, q) = av.dims2()?;
        let (bq, r) = match bv.shape() {
            &[n] => (n, 1),
            &[n, r] => (n, r),
            s => {
                return Err(Error::Dimension(format!(
                    "matmul: rank-{} right operand",
                    s.len()
                )))
            }
        };
        if q != bq {
            return Err(Error::Dimension(format!(
                "matmul: inner dimensions {q} and {bq} disagree"
            )));
        }
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![T::zero(); p * r];
        for i in 0..p {
            let row = &mut out[i * r..(i + 1) * r];
            for k in 0..q {
                let aik = ad[i * q + k];
                if aik == T::zero() {
                    continue;
                }
                for (o, &bkj) in row.iter_mut().zip(&bd[k * r..(k + 1) * r]) {
                    *o = *o + aik * bkj;
                }
            }
        }
        let shape = if bv.rank() == 1 { vec![p] } else { vec![p, r] };
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "add")?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a per-row bias `[d]` to every column of `x: [d×m]` (or to a
    /// vector `x: [d]`).
    pub fn add_col_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let rows = xv.shape()[0];
        if bv.shape() != [rows] || xv.rank() > 2 {
            return Err(Error::Dimension(format!(
                "add_col_bias: bias {:?} does not match rows of {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let cols = xv.numel() / rows;
        let bd = bv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i / cols])
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddColBias(x, bias), &[x, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "mul")?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise product with a constant that takes no gradient.
    pub fn mul_const(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.numel() {
            return Err(Error::Dimension(format!(
                "mul_const: mask of {} for {} values",
                mask.len(),
                xv.numel()
            )));
        }
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulConst(x, mask), &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid_scalar);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    /// Keeps entries of `x` inside the closed band `[0.5 − half_width,
    /// 0.5 + half_width]` and zeroes the rest. The band indicator is a
    /// constant in backward.
    pub fn valve(&mut self, x: Var, half_width: f64) -> Var {
        let xv = self.value(x);
        let lo = T::from_f64(0.5 - half_width);
        let hi = T::from_f64(0.5 + half_width);
        let open: Vec<bool> = xv.data().iter().map(|&v| lo <= v && v <= hi).collect();
        let data = xv
            .data()
            .iter()
            .zip(&open)
            .map(|(&v, &o)| if o { v } else { T::zero() })
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.push(out, Op::Valve(x, open), &[x])
    }

    /// Row-wise softmax of `x: [d×m]` across the `m` columns, stabilized by
    /// subtracting each row's maximum. Vectors are treated as a single row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let cols = *xv.shape().last().expect("rank ≥ 1");
        if xv.rank() > 2 {
            return Err(Error::Dimension("softmax_rows: rank > 2".into()));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::SoftmaxRows(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Sums `x: [d×m]` over its columns, giving `[d]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.value(x).dims2()?;
        let data = self
            .value(x)
            .data()
            .chunks(cols)
            .map(|r| r.iter().copied().sum())
            .collect();
        Ok(self.push(Tensor::vector(data)?, Op::SumCols(x), &[x]))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Contract("mean of zero terms".into()));
        }
        let mut total = T::zero();
        for &x in xs {
            let v = self.value(x);
            if v.numel() != 1 {
                return Err(Error::Dimension("mean: non-scalar term".into()));
            }
            total = total + v.item();
        }
        let n = T::from_f64(xs.len() as f64);
        Ok(self.push(Tensor::scalar(total / n), Op::Mean(xs.to_vec()), xs))
    }

    /// Bank of same-padded 1-D convolutions over word positions.
    ///
    /// `x: [k×m]` holds one embedding per column, `filters: [n×(window·k)]`
    /// holds one flattened `window×k` filter per row and `bias: [n]`. Output
    /// `[n×m]`; position `i` sees columns `i − ⌊window/2⌋ ..` of the
    /// zero-padded input. No activation is applied.
    pub fn conv1d_same(&mut self, x: Var, filters: Var, bias: Var, window: usize) -> Result<Var> {
        let (k, m) = self.value(x).dims2()?;
        let (n, span) = self.value(filters).dims2()?;
        if window == 0 || span != window * k {
            return Err(Error::Dimension(format!(
                "conv1d_same: filters of width {span} do not match window {window} × k {k}"
            )));
        }
        if self.value(bias).shape() != [n] {
            return Err(Error::Dimension("conv1d_same: bias length".into()));
        }
        let xt = transpose(self.value(x).data(), k, m);
        let fd = self.value(filters).data();
        let bd = self.value(bias).data();
        let (left, _) = same_padding(window);
        let mut out = vec![T::zero(); n * m];
        for f in 0..n {
            let filt = &fd[f * span..(f + 1) * span];
            for i in 0..m {
                let mut acc = bd[f];
                for r in 0..window {
                    let Some(j) = (i + r).checked_sub(left).filter(|&j| j < m) else {
                        continue;
                    };
                    let col = &xt[j * k..(j + 1) * k];
                    let w = &filt[r * k..(r + 1) * k];
                    acc = acc + col.iter().zip(w).map(|(&a, &b)| a * b).sum::<T>();
                }
                out[f * m + i] = acc;
            }
        }
        let out = Tensor::new(vec![n, m], out)?;
        Ok(self.push(
            out,
            Op::Conv1dSame {
                x,
                filters,
                bias,
                window,
            },
            &[x, filters, bias],
        ))
    }

    /// Gathers rows of `table: [V×k]` into the columns of a `[k×m]` matrix.
    pub fn embed(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (vocab, k) = self.value(table).dims2()?;
        if indices.is_empty() {
            return Err(Error::Dimension("embed: empty index list".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::Index(format!(
                "embed: token index {bad} outside vocabulary of {vocab}"
            )));
        }
        let m = indices.len();
        let td = self.value(table).data();
        let mut out = vec![T::zero(); k * m];
        for (j, &idx) in indices.iter().enumerate() {
            for q in 0..k {
                out[q * m + j] = td[idx * k + q];
            }
        }
        let out = Tensor::new(vec![k, m], out)?;
        Ok(self.push(
            out,
            Op::Embed {
                table,
                indices: indices.to_vec(),
            },
            &[table],
        ))
    }

    /// `−ln softmax(logits)[label]` for a single instance.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 1 {
            return Err(Error::Dimension(
                "cross_entropy: logits must be a vector".into(),
            ));
        }
        if label >= lv.numel() {
            return Err(Error::Index(format!(
                "cross_entropy: label {label} outside {} classes",
                lv.numel()
            )));
        }
        let max = lv.data().iter().copied().fold(T::neg_infinity(), T::max);
        let shifted: Vec<T> = lv.data().iter().map(|&v| v - max).collect();
        let log_total = shifted.iter().map(|v| v.exp()).sum::<T>().ln();
        let loss = log_total - shifted[label];
        let probs = shifted.iter().map(|&v| (v - log_total).exp()).collect();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
        ))
    }

    /// Column `t` of `x: [d×m]` as a vector `[d]`.
    pub fn column(&mut self, x: Var, t: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if t >= cols {
            return Err(Error::Index(format!("column {t} of {cols}")));
        }
        let xd = self.value(x).data();
        let data = (0..rows).map(|r| xd[r * cols + t]).collect();
        Ok(self.push(Tensor::vector(data)?, Op::Column(x, t), &[x]))
    }

    /// Stacks equal-length vectors as the columns of a `[d×m]` matrix.
    pub fn stack_columns(&mut self, cols: &[Var]) -> Result<Var> {
        let Some(&first) = cols.first() else {
            return Err(Error::Dimension("stack_columns: no columns".into()));
        };
        let d = self.value(first).numel();
        let m = cols.len();
        let mut out = vec![T::zero(); d * m];
        for (t, &c) in cols.iter().enumerate() {
            let cv = self.value(c);
            if cv.shape() != [d] {
                return Err(Error::Dimension("stack_columns: ragged columns".into()));
            }
            for (r, &v) in cv.data().iter().enumerate() {
                out[r * m + t] = v;
            }
        }
        let out = Tensor::new(vec![d, m], out)?;
        Ok(self.push(out, Op::StackColumns(cols.to_vec()), cols))
    }

    /// Contiguous sub-vector `x[start..start + len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 1 || start + len > xv.numel() || len == 0 {
            return Err(Error::Dimension(format!(
                "slice {start}..{} of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let data = xv.data()[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(data)?, Op::Slice(x, start), &[x]))
    }

    /// Concatenates matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Dimension("concat_rows: no parts".into()));
        };
        let (_, cols) = self.value(first).dims2()?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != cols {
                return Err(Error::Dimension("concat_rows: column counts differ".into()));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }
}

pub(crate) fn transpose<T: Copy>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for c in 0..cols {
        for r in 0..rows {
            out.push(data[r * cols + c]);
        }
    }
    out
}
