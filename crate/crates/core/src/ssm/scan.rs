//! Selective state space scan.
//!
//! Per channel `c` and state `n`:
//!
//! ```text
//! h[t] = exp(Δ[t,c]·A[c,n]) · h[t-1] + Δ[t,c]·B[t,n]·u[t,c]      h[-1] = 0
//! y[t,c] = Σ_n C[t,n]·h[t,c,n] + D[c]·u[t,c]
//! ```
//!
//! `A` is discretized with a zero-order hold and `B` with an Euler step. The
//! recurrence runs sequentially; the backward pass is hand-derived and walks
//! the stored states in reverse.

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::numerics::{BackwardFn, DiffTensor, Tensor};
use crate::params::{Bound, ParamId, Scope};

/// Fused scan primitive.
///
/// Shapes: `u`, `delta` `[T×C]`; `a` `[C×N]`; `b`, `c` `[T×N]`; `d` `[C]`.
/// `delta` is the already-positive step size.
pub fn selective_scan<'t>(
    u: DiffTensor<'t>,
    delta: DiffTensor<'t>,
    a: DiffTensor<'t>,
    b: DiffTensor<'t>,
    c: DiffTensor<'t>,
    d: DiffTensor<'t>,
) -> Result<DiffTensor<'t>> {
    let tape = u.tape();
    let (uv, dv, av, bv, cv, skip) = (
        u.value(),
        delta.value(),
        a.value(),
        b.value(),
        c.value(),
        d.value(),
    );
    let (t_len, ch) = uv.dims2()?;
    let (ach, n) = av.dims2()?;
    if t_len == 0 {
        return Err(Error::invalid("selective_scan", "empty sequence"));
    }
    if dv.shape() != uv.shape() {
        return Err(Error::shape("selective_scan", uv.shape(), dv.shape()));
    }
    if ach != ch || skip.shape() != [ch] {
        return Err(Error::shape("selective_scan", uv.shape(), av.shape()));
    }
    if bv.shape() != [t_len, n] || cv.shape() != [t_len, n] {
        return Err(Error::shape("selective_scan", &[t_len, n], bv.shape()));
    }

    let (ud, dd, ad, bd, cd, sd) = (uv.data(), dv.data(), av.data(), bv.data(), cv.data(), skip.data());
    let mut states = vec![0.0; t_len * ch * n];
    let mut decay = vec![0.0; t_len * ch * n];
    let mut y = vec![0.0; t_len * ch];
    let mut h = vec![0.0; ch * n];
    for t in 0..t_len {
        for k in 0..ch {
            let dt = dd[t * ch + k];
            let du = dt * ud[t * ch + k];
            let mut acc = sd[k] * ud[t * ch + k];
            for s in 0..n {
                let abar = (dt * ad[k * n + s]).exp();
                let idx = k * n + s;
                h[idx] = abar * h[idx] + du * bd[t * n + s];
                acc += cd[t * n + s] * h[idx];
                decay[(t * ch + k) * n + s] = abar;
            }
            y[t * ch + k] = acc;
        }
        if !h.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                op: "selective_scan",
                position: t,
            });
        }
        states[t * ch * n..(t + 1) * ch * n].copy_from_slice(&h);
    }

    let value = Tensor::new(vec![t_len, ch], y)?;
    let backward: BackwardFn = Box::new(move |g, inputs, _| {
        let (ud, dd, ad, bd, cd, sd) = (
            inputs[0].data(),
            inputs[1].data(),
            inputs[2].data(),
            inputs[3].data(),
            inputs[4].data(),
            inputs[5].data(),
        );
        let gd_out = g.data();
        let mut gu = vec![0.0; t_len * ch];
        let mut gdelta = vec![0.0; t_len * ch];
        let mut ga = vec![0.0; ch * n];
        let mut gb = vec![0.0; t_len * n];
        let mut gc = vec![0.0; t_len * n];
        let mut gskip = vec![0.0; ch];
        // dL/dh[t] flowing back from step t+1
        let mut gh = vec![0.0; ch * n];
        for t in (0..t_len).rev() {
            for k in 0..ch {
                let gy = gd_out[t * ch + k];
                let ut = ud[t * ch + k];
                let dt = dd[t * ch + k];
                gu[t * ch + k] += gy * sd[k];
                gskip[k] += gy * ut;
                let mut g_dt = 0.0;
                let mut g_u = 0.0;
                for s in 0..n {
                    let idx = k * n + s;
                    let sidx = (t * ch + k) * n + s;
                    let ght = gh[idx] + gy * cd[t * n + s];
                    gc[t * n + s] += gy * states[sidx];
                    let hprev = if t > 0 { states[sidx - ch * n] } else { 0.0 };
                    let abar = decay[sidx];
                    let g_abar = ght * hprev * abar;
                    g_dt += g_abar * ad[idx] + ght * bd[t * n + s] * ut;
                    ga[idx] += g_abar * dt;
                    gb[t * n + s] += ght * dt * ut;
                    g_u += ght * dt * bd[t * n + s];
                    gh[idx] = ght * abar;
                }
                gdelta[t * ch + k] += g_dt;
                gu[t * ch + k] += g_u;
            }
        }
        vec![
            Some(Tensor::from_parts(vec![t_len, ch], gu)),
            Some(Tensor::from_parts(vec![t_len, ch], gdelta)),
            Some(Tensor::from_parts(vec![ch, n], ga)),
            Some(Tensor::from_parts(vec![t_len, n], gb)),
            Some(Tensor::from_parts(vec![t_len, n], gc)),
            Some(Tensor::from_parts(vec![ch], gskip)),
        ]
    });
    Ok(tape.record(value, &[u, delta, a, b, c, d], backward))
}

/// Input-dependent SSM parameters for one scan direction.
#[derive(Clone, Debug)]
pub struct SelectiveSsm {
    /// `d_inner → dt_rank + 2·d_state`, no bias; produces the Δ input, B and C.
    pub x_proj: Linear,
    /// `dt_rank → d_inner` with bias; Δ = softplus of its output.
    pub dt_proj: Linear,
    /// `[d_inner×d_state]`; A = −exp(a_log).
    pub a_log: ParamId,
    /// `[d_inner]` skip weights.
    pub d_skip: ParamId,
    pub d_inner: usize,
    pub d_state: usize,
    pub dt_rank: usize,
}

impl SelectiveSsm {
    pub fn new(scope: &mut Scope<'_>, name: &str, d_inner: usize, d_state: usize, dt_rank: usize) -> Self {
        let mut s = scope.sub(name);
        let x_proj = Linear::new(&mut s, "x_proj", d_inner, dt_rank + 2 * d_state, false);
        let dt_proj = Linear::new(&mut s, "dt_proj", dt_rank, d_inner, true);
        // dt_proj: weight ~ U(±rank^-1/2), bias = softplus⁻¹(dt) with dt log-uniform in [1e-3, 1e-1]
        let w = s.uniform(vec![dt_rank, d_inner], (dt_rank as f64).powf(-0.5));
        s.set(dt_proj.weight, w);
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        let bias: Vec<f64> = (0..d_inner)
            .map(|_| {
                let u: f64 = rand::Rng::random(s.rng());
                let dt = (lo + u * (hi - lo)).exp().max(1e-4);
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect();
        s.set(dt_proj.bias.expect("dt_proj has bias"), Tensor::vector(bias));
        let a_init: Vec<f64> = (0..d_inner)
            .flat_map(|_| (1..=d_state).map(|k| (k as f64).ln()))
            .collect();
        let a_log = s.add("a_log", Tensor::new(vec![d_inner, d_state], a_init).expect("shape"));
        let d_skip = s.add("d_skip", Tensor::ones(vec![d_inner]));
        Self {
            x_proj,
            dt_proj,
            a_log,
            d_skip,
            d_inner,
            d_state,
            dt_rank,
        }
    }

    /// Computes Δ, B, C from `u` and runs the scan. `u` is `[T×d_inner]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, u: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        let (r, n) = (self.dt_rank, self.d_state);
        let proj = self.x_proj.forward(p, u)?;
        let dt_in = proj.slice(1, 0, r)?;
        let b = proj.slice(1, r, r + n)?;
        let c = proj.slice(1, r + n, r + 2 * n)?;
        let delta = self.dt_proj.forward(p, dt_in)?.softplus();
        let a = p.get(self.a_log).exp().neg();
        selective_scan(u, delta, a, b, c, p.get(self.d_skip))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.x_proj.params();
        ids.extend(self.dt_proj.params());
        ids.extend([self.a_log, self.d_skip]);
        ids
    }

    /// Projections plus `T·d_inner·d_state·3` for the recurrence
    /// (discretize A, input term, output contraction).
    pub fn macs(&self, seq_len: usize) -> u64 {
        self.x_proj.macs(seq_len)
            + self.dt_proj.macs(seq_len)
            + (seq_len * self.d_inner * self.d_state * SCAN_MACS_PER_TERM) as u64
    }
}

pub const SCAN_MACS_PER_TERM: usize = 3;
