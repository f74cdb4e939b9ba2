//! Small parameterized layers shared by the blocks and the model heads.

use crate::error::Result;
use crate::numerics::{DiffTensor, Tensor, LAYER_NORM_EPS};
use crate::params::{Bound, ParamId, ParamStore, Scope};

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Uniform(±1/√d_in) initialization for weight and bias.
    pub fn new(scope: &mut Scope<'_>, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let mut s = scope.sub(name);
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = s.uniform(vec![d_in, d_out], bound);
        let weight = s.add("weight", w);
        let bias = bias.then(|| {
            let b = s.uniform(vec![d_out], bound);
            s.add("bias", b)
        });
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        let y = x.matmul(p.get(self.weight))?;
        match self.bias {
            Some(b) => y.add(p.get(b)),
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }

    pub fn macs(&self, seq_len: usize) -> u64 {
        (self.d_in * self.d_out * seq_len) as u64
    }

    /// Sets weight (and bias) to zero; used to build identity residual branches.
    pub fn zero(&self, store: &mut ParamStore) {
        store.set(self.weight, Tensor::zeros(vec![self.d_in, self.d_out]));
        if let Some(b) = self.bias {
            store.set(b, Tensor::zeros(vec![self.d_out]));
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(scope: &mut Scope<'_>, name: &str, dim: usize) -> Self {
        let mut s = scope.sub(name);
        let gain = s.add("gain", Tensor::ones(vec![dim]));
        let bias = s.add("bias", Tensor::zeros(vec![dim]));
        Self { gain, bias, dim }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        x.layer_norm(p.get(self.gain), p.get(self.bias), LAYER_NORM_EPS)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

/// Two linear layers with SiLU in between.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(scope: &mut Scope<'_>, name: &str, d_in: usize, hidden: usize, d_out: usize) -> Self {
        let mut s = scope.sub(name);
        Self {
            up: Linear::new(&mut s, "up", d_in, hidden, true),
            down: Linear::new(&mut s, "down", hidden, d_out, true),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        let h = self.up.forward(p, x)?.silu();
        self.down.forward(p, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.up.params();
        ids.extend(self.down.params());
        ids
    }

    pub fn macs(&self, seq_len: usize) -> u64 {
        self.up.macs(seq_len) + self.down.macs(seq_len)
    }
}
