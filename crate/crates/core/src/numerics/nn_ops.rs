//! Fused neural-network primitives with hand-written vector-Jacobian products.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{BackwardFn, DiffTensor};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Padding used by [`DiffTensor::conv1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    /// `k - 1` zeros on the left; output at `t` sees inputs `t-k+1..=t`.
    Causal,
    /// `(k-1)/2` zeros on the left, the rest on the right.
    Same,
}

impl ConvMode {
    fn left_pad(self, k: usize) -> usize {
        match self {
            ConvMode::Causal => k - 1,
            ConvMode::Same => (k - 1) / 2,
        }
    }
}

/// Inverted-dropout keep mask: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

impl<'t> DiffTensor<'t> {
    /// Normalizes every row of a `[T×d]` matrix over its features, then applies
    /// the affine `gain`/`bias`.
    pub fn layer_norm(
        self,
        gain: DiffTensor<'t>,
        bias: DiffTensor<'t>,
        eps: f64,
    ) -> Result<DiffTensor<'t>> {
        if eps <= 0.0 {
            return Err(Error::invalid("layer_norm", "eps must be positive"));
        }
        let (value, xhat, inv_std) = {
            let x = self.tape.value_ref(self.id);
            let g = gain.tape.value_ref(gain.id);
            let b = bias.tape.value_ref(bias.id);
            let (rows, d) = x.dims2()?;
            if d == 0 || g.shape() != [d] || b.shape() != [d] {
                return Err(Error::shape("layer_norm", x.shape(), g.shape()));
            }
            let mut out = vec![0.0; rows * d];
            let mut xhat = vec![0.0; rows * d];
            let mut inv_std = vec![0.0; rows];
            for r in 0..rows {
                let row = x.row(r);
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let h = (row[j] - mean) * is;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * g.data()[j] + b.data()[j];
                }
            }
            (Tensor::from_parts(vec![rows, d], out), xhat, inv_std)
        };
        let backward: BackwardFn = Box::new(move |gy, inputs, _| {
            let (rows, d) = (gy.shape()[0], gy.shape()[1]);
            let gain = inputs[1].data();
            let mut gx = vec![0.0; rows * d];
            let mut gg = vec![0.0; d];
            let mut gb = vec![0.0; d];
            for r in 0..rows {
                let gyr = gy.row(r);
                let xh = &xhat[r * d..(r + 1) * d];
                let mut mean_g = 0.0;
                let mut mean_gx = 0.0;
                for j in 0..d {
                    let gxh = gyr[j] * gain[j];
                    mean_g += gxh;
                    mean_gx += gxh * xh[j];
                    gg[j] += gyr[j] * xh[j];
                    gb[j] += gyr[j];
                }
                mean_g /= d as f64;
                mean_gx /= d as f64;
                for j in 0..d {
                    let gxh = gyr[j] * gain[j];
                    gx[r * d + j] = inv_std[r] * (gxh - mean_g - xh[j] * mean_gx);
                }
            }
            vec![
                Some(Tensor::from_parts(vec![rows, d], gx)),
                Some(Tensor::from_parts(vec![d], gg)),
                Some(Tensor::from_parts(vec![d], gb)),
            ]
        });
        Ok(self.tape.record(value, &[self, gain, bias], backward))
    }

    /// Full 1-D convolution over time: `x` is `[T×d_in]`, `kernels` is
    /// `[d_out×d_in×k]`, output is `[T×d_out]` in both modes.
    pub fn conv1d(self, kernels: DiffTensor<'t>, mode: ConvMode) -> Result<DiffTensor<'t>> {
        let (value, t_len, d_in, d_out, k) = {
            let x = self.tape.value_ref(self.id);
            let w = kernels.tape.value_ref(kernels.id);
            let (t_len, d_in) = x.dims2()?;
            let &[d_out, wd_in, k] = w.shape() else {
                return Err(Error::shape("conv1d", x.shape(), w.shape()));
            };
            if wd_in != d_in || k == 0 {
                return Err(Error::shape("conv1d", x.shape(), w.shape()));
            }
            if t_len == 0 {
                return Err(Error::invalid("conv1d", "empty sequence"));
            }
            let wt = tap_major(w.data(), d_out, d_in, k);
            let pad = mode.left_pad(k);
            let mut out = vec![0.0; t_len * d_out];
            for t in 0..t_len {
                let out_row = &mut out[t * d_out..(t + 1) * d_out];
                for j in 0..k {
                    let Some(s) = (t + j).checked_sub(pad).filter(|&s| s < t_len) else {
                        continue;
                    };
                    let x_row = x.row(s);
                    let wj = &wt[j * d_out * d_in..(j + 1) * d_out * d_in];
                    for (o, acc) in out_row.iter_mut().enumerate() {
                        let w_row = &wj[o * d_in..(o + 1) * d_in];
                        *acc += w_row.iter().zip(x_row).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            (Tensor::from_parts(vec![t_len, d_out], out), t_len, d_in, d_out, k)
        };
        let pad = mode.left_pad(k);
        let backward: BackwardFn = Box::new(move |g, inputs, _| {
            let (x, w) = (inputs[0], inputs[1]);
            let wt = tap_major(w.data(), d_out, d_in, k);
            let mut gx = vec![0.0; t_len * d_in];
            let mut gwt = vec![0.0; k * d_out * d_in];
            for t in 0..t_len {
                let g_row = g.row(t);
                for j in 0..k {
                    let Some(s) = (t + j).checked_sub(pad).filter(|&s| s < t_len) else {
                        continue;
                    };
                    let x_row = x.row(s);
                    let base = j * d_out * d_in;
                    for (o, &go) in g_row.iter().enumerate() {
                        if go == 0.0 {
                            continue;
                        }
                        let w_row = &wt[base + o * d_in..base + (o + 1) * d_in];
                        let gx_row = &mut gx[s * d_in..(s + 1) * d_in];
                        for (gxi, wv) in gx_row.iter_mut().zip(w_row) {
                            *gxi += go * wv;
                        }
                        let gw_row = &mut gwt[base + o * d_in..base + (o + 1) * d_in];
                        for (gwi, xv) in gw_row.iter_mut().zip(x_row) {
                            *gwi += go * xv;
                        }
                    }
                }
            }
            // back to [d_out×d_in×k]
            let mut gw = vec![0.0; d_out * d_in * k];
            for j in 0..k {
                for o in 0..d_out {
                    for i in 0..d_in {
                        gw[(o * d_in + i) * k + j] = gwt[(j * d_out + o) * d_in + i];
                    }
                }
            }
            vec![
                Some(Tensor::from_parts(vec![t_len, d_in], gx)),
                Some(Tensor::from_parts(vec![d_out, d_in, k], gw)),
            ]
        });
        Ok(self.tape.record(value, &[self, kernels], backward))
    }

    /// Channel-wise (depthwise) 1-D convolution: `x` is `[T×c]`, `kernels`
    /// is `[c×k]`, each channel convolved with its own filter.
    pub fn conv1d_depthwise(self, kernels: DiffTensor<'t>, mode: ConvMode) -> Result<DiffTensor<'t>> {
        let (value, k) = {
            let x = self.tape.value_ref(self.id);
            let w = kernels.tape.value_ref(kernels.id);
            let (t_len, c) = x.dims2()?;
            let (wc, k) = w.dims2()?;
            if wc != c || k == 0 {
                return Err(Error::shape("conv1d_depthwise", x.shape(), w.shape()));
            }
            if t_len == 0 {
                return Err(Error::invalid("conv1d_depthwise", "empty sequence"));
            }
            let pad = mode.left_pad(k);
            let mut out = vec![0.0; t_len * c];
            for t in 0..t_len {
                for j in 0..k {
                    let Some(s) = (t + j).checked_sub(pad).filter(|&s| s < t_len) else {
                        continue;
                    };
                    for ch in 0..c {
                        out[t * c + ch] += w.data()[ch * k + j] * x.data()[s * c + ch];
                    }
                }
            }
            (Tensor::from_parts(vec![t_len, c], out), k)
        };
        let pad = mode.left_pad(k);
        let backward: BackwardFn = Box::new(move |g, inputs, _| {
            let (x, w) = (inputs[0], inputs[1]);
            let (t_len, c) = (x.shape()[0], x.shape()[1]);
            let mut gx = vec![0.0; t_len * c];
            let mut gw = vec![0.0; c * k];
            for t in 0..t_len {
                for j in 0..k {
                    let Some(s) = (t + j).checked_sub(pad).filter(|&s| s < t_len) else {
                        continue;
                    };
                    for ch in 0..c {
                        let go = g.data()[t * c + ch];
                        gx[s * c + ch] += go * w.data()[ch * k + j];
                        gw[ch * k + j] += go * x.data()[s * c + ch];
                    }
                }
            }
            vec![
                Some(Tensor::from_parts(vec![t_len, c], gx)),
                Some(Tensor::from_parts(vec![c, k], gw)),
            ]
        });
        Ok(self.tape.record(value, &[self, kernels], backward))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(self) -> Result<DiffTensor<'t>> {
        let value = {
            let x = self.tape.value_ref(self.id);
            let c = last_dim(&x, "softmax")?;
            let mut out = x.to_vec();
            for row in out.chunks_mut(c) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    z += *v;
                }
                for v in row.iter_mut() {
                    *v /= z;
                }
            }
            Tensor::from_parts(x.shape().to_vec(), out)
        };
        let backward: BackwardFn = Box::new(|g, _, y| {
            let c = *y.shape().last().unwrap();
            let mut out = vec![0.0; y.numel()];
            for ((o, gr), yr) in out
                .chunks_mut(c)
                .zip(g.data().chunks(c))
                .zip(y.data().chunks(c))
            {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((ov, gv), yv) in o.iter_mut().zip(gr).zip(yr) {
                    *ov = yv * (gv - dot);
                }
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), out))]
        });
        Ok(self.tape.record(value, &[self], backward))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Result<DiffTensor<'t>> {
        let value = {
            let x = self.tape.value_ref(self.id);
            let c = last_dim(&x, "log_softmax")?;
            let mut out = x.to_vec();
            for row in out.chunks_mut(c) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for v in row.iter_mut() {
                    *v -= lse;
                }
            }
            Tensor::from_parts(x.shape().to_vec(), out)
        };
        let backward: BackwardFn = Box::new(|g, _, y| {
            let c = *y.shape().last().unwrap();
            let mut out = vec![0.0; y.numel()];
            for ((o, gr), yr) in out
                .chunks_mut(c)
                .zip(g.data().chunks(c))
                .zip(y.data().chunks(c))
            {
                let gsum: f64 = gr.iter().sum();
                for ((ov, gv), yv) in o.iter_mut().zip(gr).zip(yr) {
                    *ov = gv - yv.exp() * gsum;
                }
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), out))]
        });
        Ok(self.tape.record(value, &[self], backward))
    }

    /// Inverted dropout; identity when `training` is false or `rate` is 0.
    pub fn dropout<R: Rng + ?Sized>(
        self,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<DiffTensor<'t>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(self);
        }
        let mask = Tensor::from_parts(self.shape(), dropout_mask(self.numel(), rate, rng)?);
        let mask = self.tape.constant(mask);
        self.mul(mask)
    }
}

fn last_dim(x: &Tensor, op: &'static str) -> Result<usize> {
    match x.shape().last() {
        Some(&c) if c > 0 => Ok(c),
        _ => Err(Error::Axis {
            op,
            axis: 0,
            rank: x.rank(),
        }),
    }
}

/// Reorders `[d_out×d_in×k]` kernels to `[k×d_out×d_in]`.
fn tap_major(w: &[f64], d_out: usize, d_in: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for o in 0..d_out {
        for i in 0..d_in {
            for j in 0..k {
                out[(j * d_out + o) * d_in + i] = w[(o * d_in + i) * k + j];
            }
        }
    }
    out
}
