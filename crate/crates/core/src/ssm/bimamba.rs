use serde::{Deserialize, Serialize};

use super::scan::SelectiveSsm;
use crate::error::Result;
use crate::nn::Linear;
use crate::numerics::{ConvMode, DiffTensor, Tensor};
use crate::params::{Bound, ParamId, Scope};

/// Selective-SSM hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsmConfig {
    pub d_state: usize,
    /// `d_inner = expand · d`
    pub expand: usize,
    /// Δ projection rank; `None` means `⌈d/16⌉`.
    pub dt_rank: Option<usize>,
    /// Causal depthwise convolution width inside each branch.
    pub conv_kernel: usize,
}

impl Default for SsmConfig {
    fn default() -> Self {
        Self {
            d_state: 16,
            expand: 2,
            dt_rank: None,
            conv_kernel: 4,
        }
    }
}

impl SsmConfig {
    pub fn dt_rank_for(&self, d: usize) -> usize {
        self.dt_rank.unwrap_or_else(|| d.div_ceil(16)).max(1)
    }
}

/// One scan direction: causal depthwise conv (with bias, then SiLU) followed by the SSM.
#[derive(Clone, Debug)]
pub struct Branch {
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
    pub ssm: SelectiveSsm,
    pub kernel: usize,
}

impl Branch {
    fn new(scope: &mut Scope<'_>, name: &str, d_inner: usize, cfg: &SsmConfig, dt_rank: usize) -> Self {
        let mut s = scope.sub(name);
        let bound = 1.0 / (cfg.conv_kernel as f64).sqrt();
        let w = s.uniform(vec![d_inner, cfg.conv_kernel], bound);
        let conv_weight = s.add("conv.weight", w);
        let b = s.uniform(vec![d_inner], bound);
        let conv_bias = s.add("conv.bias", b);
        let ssm = SelectiveSsm::new(&mut s, "ssm", d_inner, cfg.d_state, dt_rank);
        Self {
            conv_weight,
            conv_bias,
            ssm,
            kernel: cfg.conv_kernel,
        }
    }

    /// Causal conv + SiLU; the scan input for this direction.
    pub fn conv<'t>(&self, p: &Bound<'t>, s: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        Ok(s.conv1d_depthwise(p.get(self.conv_weight), ConvMode::Causal)?
            .add(p.get(self.conv_bias))?
            .silu())
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, s: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        let c = self.conv(p, s)?;
        self.ssm.forward(p, c)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.conv_weight, self.conv_bias];
        ids.extend(self.ssm.params());
        ids
    }

    pub fn macs(&self, seq_len: usize) -> u64 {
        (seq_len * self.ssm.d_inner * self.kernel) as u64 + self.ssm.macs(seq_len)
    }
}

/// Bidirectional Mamba mixer.
///
/// ```text
/// Z  = Linear(N)            S→ = Linear(N)          S← = Flip(S→)
/// O→ = σ(Z) ⊗ SSM→(Conv→(S→))
/// O← = Flip(σ(Z)) ⊗ SSM←(Conv←(S←))
/// M  = Linear(½·O→ + ½·Flip(O←))
/// ```
///
/// The reversed branch is gated with the reversed `Z`, so after flipping
/// back every position is gated by its own `σ(Z)`.
#[derive(Clone, Debug)]
pub struct BiMambaLayer {
    pub in_z: Linear,
    pub in_s: Linear,
    pub forward_branch: Branch,
    pub backward_branch: Branch,
    pub out_proj: Linear,
    pub d: usize,
    pub d_inner: usize,
}

impl BiMambaLayer {
    pub fn new(scope: &mut Scope<'_>, name: &str, d: usize, cfg: &SsmConfig) -> Self {
        let mut s = scope.sub(name);
        let d_inner = cfg.expand * d;
        let dt_rank = cfg.dt_rank_for(d);
        Self {
            in_z: Linear::new(&mut s, "in_z", d, d_inner, false),
            in_s: Linear::new(&mut s, "in_s", d, d_inner, false),
            forward_branch: Branch::new(&mut s, "fwd", d_inner, cfg, dt_rank),
            backward_branch: Branch::new(&mut s, "bwd", d_inner, cfg, dt_rank),
            out_proj: Linear::new(&mut s, "out_proj", d_inner, d, false),
            d,
            d_inner,
        }
    }

    /// `n` is the layer-normalized block input, `[T×d]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, n: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        let gate = self.in_z.forward(p, n)?.silu();
        let s_fwd = self.in_s.forward(p, n)?;
        let s_bwd = s_fwd.flip_sequence()?;

        let o_fwd = gate.mul(self.forward_branch.forward(p, s_fwd)?)?;
        let o_bwd = gate
            .flip_sequence()?
            .mul(self.backward_branch.forward(p, s_bwd)?)?;

        let mixed = o_fwd.scale(0.5).add(o_bwd.flip_sequence()?.scale(0.5))?;
        self.out_proj.forward(p, mixed)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.in_z.params();
        ids.extend(self.in_s.params());
        ids.extend(self.forward_branch.params());
        ids.extend(self.backward_branch.params());
        ids.extend(self.out_proj.params());
        ids
    }

    pub fn macs(&self, seq_len: usize) -> u64 {
        self.in_z.macs(seq_len)
            + self.in_s.macs(seq_len)
            + self.forward_branch.macs(seq_len)
            + self.backward_branch.macs(seq_len)
            + self.out_proj.macs(seq_len)
    }

    pub fn zero_output(&self, store: &mut crate::params::ParamStore) {
        store.set(self.out_proj.weight, Tensor::zeros(vec![self.d_inner, self.d]));
    }
}
