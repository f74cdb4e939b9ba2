//! Primitive differentiable operations.

use super::tape::{BackwardFn, DiffTensor};
use super::tensor::{mm_nn, mm_nt, mm_tn, sigmoid, softplus, Tensor};
use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes (right-aligned).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape("broadcast", a, b)),
        };
    }
    Ok(out)
}

/// Source offset for every element of `out_shape` when `src_shape` is broadcast to it.
fn broadcast_offsets(src_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - src_shape.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..src_shape.len()).rev() {
        strides[i + pad] = if src_shape[i] == 1 { 0 } else { s };
        s *= src_shape[i];
    }
    let total: usize = out_shape.iter().product();
    let mut offsets = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        offsets.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    offsets
}

fn broadcast_data(src: &Tensor, out_shape: &[usize]) -> Vec<f64> {
    let n = src.numel();
    let total: usize = out_shape.iter().product();
    // suffix fast path: [d] or [1, d] onto [.., d]
    let trimmed: Vec<usize> = src.shape().iter().copied().skip_while(|&d| d == 1).collect();
    if !trimmed.is_empty() && out_shape.ends_with(&trimmed) {
        let data = src.data();
        return (0..total).map(|i| data[i % n]).collect();
    }
    let data = src.data();
    broadcast_offsets(src.shape(), out_shape)
        .into_iter()
        .map(|o| data[o])
        .collect()
}

/// Sums `grad` (of broadcast shape) back down to `shape`.
fn reduce_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    let trimmed: Vec<usize> = shape.iter().copied().skip_while(|&d| d == 1).collect();
    if !trimmed.is_empty() && grad.shape().ends_with(&trimmed) {
        for (i, g) in grad.data().iter().enumerate() {
            out[i % n] += g;
        }
    } else {
        for (o, g) in broadcast_offsets(shape, grad.shape())
            .into_iter()
            .zip(grad.data())
        {
            out[o] += g;
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t> DiffTensor<'t> {
    fn unary(
        self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> DiffTensor<'t> {
        let value = self.tape.value_ref(self.id).map(f);
        let backward: BackwardFn = Box::new(move |g, inputs, out| {
            let x = inputs[0].data();
            let y = out.data();
            let data = g
                .data()
                .iter()
                .zip(x.iter().zip(y))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
        });
        self.tape.record(value, &[self], backward)
    }

    pub fn exp(self) -> DiffTensor<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn log(self) -> DiffTensor<'t> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn powf(self, p: f64) -> DiffTensor<'t> {
        self.unary(move |x| x.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    pub fn square(self) -> DiffTensor<'t> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn sigmoid(self) -> DiffTensor<'t> {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn silu(self) -> DiffTensor<'t> {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    pub fn softplus(self) -> DiffTensor<'t> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn tanh(self) -> DiffTensor<'t> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn neg(self) -> DiffTensor<'t> {
        self.scale(-1.0)
    }

    pub fn scale(self, c: f64) -> DiffTensor<'t> {
        self.unary(move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> DiffTensor<'t> {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    /// Elementwise `max(x, floor)`; no gradient flows through clamped entries.
    pub fn clamp_min(self, floor: f64) -> DiffTensor<'t> {
        self.unary(
            move |x| x.max(floor),
            move |x, _| if x > floor { 1.0 } else { 0.0 },
        )
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<DiffTensor<'t>> {
        let src = self.value();
        if src.shape() == shape {
            return Ok(self);
        }
        let target = broadcast_shape(src.shape(), shape)?;
        if target != shape {
            return Err(Error::shape("broadcast_to", src.shape(), shape));
        }
        let value = Tensor::from_parts(target, broadcast_data(&src, shape));
        let src_shape = src.shape().to_vec();
        let backward: BackwardFn = Box::new(move |g, _, _| vec![Some(reduce_to(g, &src_shape))]);
        Ok(self.tape.record(value, &[self], backward))
    }

    fn binary(
        self,
        other: DiffTensor<'t>,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        grads: fn(f64, f64, f64) -> (f64, f64),
    ) -> Result<DiffTensor<'t>> {
        let (sa, sb) = (self.shape(), other.shape());
        let (a, b) = if sa == sb {
            (self, other)
        } else {
            let target = broadcast_shape(&sa, &sb).map_err(|_| Error::shape(op, &sa, &sb))?;
            (self.broadcast_to(&target)?, other.broadcast_to(&target)?)
        };
        let value = {
            let av = a.tape.value_ref(a.id);
            let bv = b.tape.value_ref(b.id);
            av.zip_map(&bv, f)?
        };
        let backward: BackwardFn = Box::new(move |g, inputs, _| {
            let (x, y) = (inputs[0].data(), inputs[1].data());
            let mut ga = Vec::with_capacity(g.numel());
            let mut gb = Vec::with_capacity(g.numel());
            for ((&g, &x), &y) in g.data().iter().zip(x).zip(y) {
                let (da, db) = grads(g, x, y);
                ga.push(da);
                gb.push(db);
            }
            let shape = g.shape().to_vec();
            vec![
                Some(Tensor::from_parts(shape.clone(), ga)),
                Some(Tensor::from_parts(shape, gb)),
            ]
        });
        Ok(self.tape.record(value, &[a, b], backward))
    }

    pub fn add(self, other: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        self.binary(other, "add", |a, b| a + b, |g, _, _| (g, g))
    }

    pub fn sub(self, other: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        self.binary(other, "sub", |a, b| a - b, |g, _, _| (g, -g))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        self.binary(other, "mul", |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    pub fn matmul(self, other: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        let value = {
            let a = self.tape.value_ref(self.id);
            let b = other.tape.value_ref(other.id);
            let (m, k) = a.dims2().map_err(|_| Error::shape("matmul", a.shape(), b.shape()))?;
            let (k2, n) = b.dims2().map_err(|_| Error::shape("matmul", a.shape(), b.shape()))?;
            if k != k2 {
                return Err(Error::shape("matmul", a.shape(), b.shape()));
            }
            Tensor::from_parts(vec![m, n], mm_nn(a.data(), b.data(), m, k, n))
        };
        let backward: BackwardFn = Box::new(|g, inputs, _| {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let ga = mm_nt(g.data(), b.data(), m, n, k);
            let gb = mm_tn(a.data(), g.data(), m, k, n);
            vec![
                Some(Tensor::from_parts(vec![m, k], ga)),
                Some(Tensor::from_parts(vec![k, n], gb)),
            ]
        });
        Ok(self.tape.record(value, &[self, other], backward))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<DiffTensor<'t>> {
        let value = self.tape.value_ref(self.id).reshape(shape.to_vec())?;
        let backward: BackwardFn = Box::new(|g, inputs, _| {
            vec![Some(Tensor::from_parts(
                inputs[0].shape().to_vec(),
                g.data().to_vec(),
            ))]
        });
        Ok(self.tape.record(value, &[self], backward))
    }

    pub fn transpose(self) -> Result<DiffTensor<'t>> {
        fn t(data: &[f64], r: usize, c: usize) -> Vec<f64> {
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = data[i * c + j];
                }
            }
            out
        }
        let value = {
            let x = self.tape.value_ref(self.id);
            let (r, c) = x.dims2()?;
            Tensor::from_parts(vec![c, r], t(x.data(), r, c))
        };
        let backward: BackwardFn = Box::new(|g, _, _| {
            let (c, r) = (g.shape()[0], g.shape()[1]);
            vec![Some(Tensor::from_parts(vec![r, c], t(g.data(), c, r)))]
        });
        Ok(self.tape.record(value, &[self], backward))
    }

    /// Reverses the leading (time) axis.
    pub fn flip_sequence(self) -> Result<DiffTensor<'t>> {
        fn flip(x: &Tensor) -> Tensor {
            let rows = x.shape()[0];
            let width = x.numel() / rows.max(1);
            let mut out = Vec::with_capacity(x.numel());
            for r in (0..rows).rev() {
                out.extend_from_slice(&x.data()[r * width..(r + 1) * width]);
            }
            Tensor::from_parts(x.shape().to_vec(), out)
        }
        let value = {
            let x = self.tape.value_ref(self.id);
            if x.rank() == 0 {
                return Err(Error::Axis {
                    op: "flip_sequence",
                    axis: 0,
                    rank: 0,
                });
            }
            flip(&x)
        };
        let backward: BackwardFn = Box::new(|g, _, _| vec![Some(flip(g))]);
        Ok(self.tape.record(value, &[self], backward))
    }

    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<DiffTensor<'t>> {
        let (value, in_shape) = {
            let x = self.tape.value_ref(self.id);
            let shape = x.shape();
            if axis >= shape.len() {
                return Err(Error::Axis {
                    op: "slice",
                    axis,
                    rank: shape.len(),
                });
            }
            if start > end || end > shape[axis] {
                return Err(Error::invalid(
                    "slice",
                    format!("range {start}..{end} out of bounds for axis of length {}", shape[axis]),
                ));
            }
            let (outer, len, inner) = split_axis(shape, axis);
            let mut out = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                let base = o * len * inner;
                out.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
            }
            let mut out_shape = shape.to_vec();
            out_shape[axis] = end - start;
            (Tensor::from_parts(out_shape, out), shape.to_vec())
        };
        let backward: BackwardFn = Box::new(move |g, _, _| {
            let (outer, len, inner) = split_axis(&in_shape, axis);
            let mut out = vec![0.0; in_shape.iter().product()];
            let width = (end - start) * inner;
            for o in 0..outer {
                let base = o * len * inner + start * inner;
                out[base..base + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), out))]
        });
        Ok(self.tape.record(value, &[self], backward))
    }

    pub fn sum(self) -> DiffTensor<'t> {
        let value = Tensor::scalar(self.tape.value_ref(self.id).sum());
        let backward: BackwardFn = Box::new(|g, inputs, _| {
            vec![Some(Tensor::full(inputs[0].shape().to_vec(), g.item()))]
        });
        self.tape.record(value, &[self], backward)
    }

    pub fn mean(self) -> DiffTensor<'t> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<DiffTensor<'t>> {
        let (value, in_shape) = {
            let x = self.tape.value_ref(self.id);
            let shape = x.shape().to_vec();
            if axis >= shape.len() {
                return Err(Error::Axis {
                    op: "sum_axis",
                    axis,
                    rank: shape.len(),
                });
            }
            let (outer, len, inner) = split_axis(&shape, axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                    for (dst, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *dst += v;
                    }
                }
            }
            let mut out_shape = shape.clone();
            out_shape.remove(axis);
            (Tensor::from_parts(out_shape, out), shape)
        };
        let backward: BackwardFn = Box::new(move |g, _, _| {
            let (outer, len, inner) = split_axis(&in_shape, axis);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                for _ in 0..len {
                    out.extend_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), out))]
        });
        Ok(self.tape.record(value, &[self], backward))
    }

    pub fn mean_axis(self, axis: usize) -> Result<DiffTensor<'t>> {
        let shape = self.shape();
        let len = *shape.get(axis).ok_or(Error::Axis {
            op: "mean_axis",
            axis,
            rank: shape.len(),
        })?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    /// Row lookup: `self` is a `[V×d]` table, result is `[ids.len()×d]`.
    pub fn gather_rows(self, ids: &[usize]) -> Result<DiffTensor<'t>> {
        let value = {
            let table = self.tape.value_ref(self.id);
            let (v, d) = table.dims2()?;
            let mut out = Vec::with_capacity(ids.len() * d);
            for &i in ids {
                if i >= v {
                    return Err(Error::invalid(
                        "gather_rows",
                        format!("row {i} out of range for table with {v} rows"),
                    ));
                }
                out.extend_from_slice(table.row(i));
            }
            Tensor::from_parts(vec![ids.len(), d], out)
        };
        let ids = ids.to_vec();
        let backward: BackwardFn = Box::new(move |g, inputs, _| {
            let (v, d) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            let mut out = vec![0.0; v * d];
            for (r, &i) in ids.iter().enumerate() {
                for (o, gv) in out[i * d..(i + 1) * d].iter_mut().zip(g.row(r)) {
                    *o += gv;
                }
            }
            vec![Some(Tensor::from_parts(vec![v, d], out))]
        });
        Ok(self.tape.record(value, &[self], backward))
    }

    /// Selects `self[r, cols[r]]` from an `[N×C]` matrix, giving `[N]`.
    pub fn pick(self, cols: &[usize]) -> Result<DiffTensor<'t>> {
        let value = {
            let x = self.tape.value_ref(self.id);
            let (n, c) = x.dims2()?;
            if cols.len() != n {
                return Err(Error::shape("pick", x.shape(), &[cols.len()]));
            }
            if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
                return Err(Error::invalid("pick", format!("column {bad} out of range {c}")));
            }
            Tensor::vector(cols.iter().enumerate().map(|(r, &j)| x.at2(r, j)).collect())
        };
        let cols = cols.to_vec();
        let backward: BackwardFn = Box::new(move |g, inputs, _| {
            let c = inputs[0].shape()[1];
            let mut out = vec![0.0; inputs[0].numel()];
            for (r, &j) in cols.iter().enumerate() {
                out[r * c + j] = g.data()[r];
            }
            vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), out))]
        });
        Ok(self.tape.record(value, &[self], backward))
    }
}

/// Concatenates tensors along `axis`; all other dimensions must agree.
pub fn concat<'t>(parts: &[DiffTensor<'t>], axis: usize) -> Result<DiffTensor<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
    let tape = first.tape;
    let shapes: Vec<Vec<usize>> = parts.iter().map(DiffTensor::shape).collect();
    let rank = shapes[0].len();
    if axis >= rank {
        return Err(Error::Axis {
            op: "concat",
            axis,
            rank,
        });
    }
    for s in &shapes[1..] {
        let compatible = s.len() == rank
            && s.iter()
                .zip(&shapes[0])
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::shape("concat", &shapes[0], s));
        }
    }
    let lens: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
    let (outer, _, inner) = split_axis(&shapes[0], axis);
    let total_len: usize = lens.iter().sum();
    let mut out = Vec::with_capacity(outer * total_len * inner);
    for o in 0..outer {
        for (p, &len) in parts.iter().zip(&lens) {
            let v = tape.value_ref(p.id);
            out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut out_shape = shapes[0].clone();
    out_shape[axis] = total_len;
    let value = Tensor::from_parts(out_shape, out);
    let backward: BackwardFn = Box::new(move |g, _, _| {
        let mut grads: Vec<Vec<f64>> = lens
            .iter()
            .map(|&l| Vec::with_capacity(outer * l * inner))
            .collect();
        let mut cursor = 0;
        for _ in 0..outer {
            for (gp, &len) in grads.iter_mut().zip(&lens) {
                gp.extend_from_slice(&g.data()[cursor..cursor + len * inner]);
                cursor += len * inner;
            }
        }
        grads
            .into_iter()
            .zip(&shapes)
            .map(|(data, s)| Some(Tensor::from_parts(s.clone(), data)))
            .collect()
    });
    Ok(tape.record(value, parts, backward))
}
