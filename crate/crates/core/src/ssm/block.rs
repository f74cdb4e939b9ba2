use serde::{Deserialize, Serialize};

use super::bimamba::{BiMambaLayer, SsmConfig};
use crate::error::{Error, Result};
use crate::nn::{FeedForward, LayerNorm, Linear};
use crate::numerics::{concat, DiffTensor};
use crate::params::{Bound, ParamId, ParamStore, Scope};

/// Pre-norm residual block with a bidirectional Mamba mixer:
/// `H' = BiMamba(LN(H)) + H`, `out = FFN(LN(H')) + H'`.
#[derive(Clone, Debug)]
pub struct MambaBlock {
    pub norm_mix: LayerNorm,
    pub mixer: BiMambaLayer,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl MambaBlock {
    pub fn new(scope: &mut Scope<'_>, name: &str, d: usize, ffn_hidden: usize, cfg: &SsmConfig) -> Self {
        let mut s = scope.sub(name);
        Self {
            norm_mix: LayerNorm::new(&mut s, "norm_mix", d),
            mixer: BiMambaLayer::new(&mut s, "bimamba", d, cfg),
            norm_ffn: LayerNorm::new(&mut s, "norm_ffn", d),
            ffn: FeedForward::new(&mut s, "ffn", d, ffn_hidden, d),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, h: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        let mixed = self.mixer.forward(p, self.norm_mix.forward(p, h)?)?;
        let h = mixed.add(h)?;
        let ff = self.ffn.forward(p, self.norm_ffn.forward(p, h)?)?;
        ff.add(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.norm_mix.params();
        ids.extend(self.mixer.params());
        ids.extend(self.norm_ffn.params());
        ids.extend(self.ffn.params());
        ids
    }

    pub fn macs(&self, seq_len: usize) -> u64 {
        self.mixer.macs(seq_len) + self.ffn.macs(seq_len)
    }

    /// Zeroes both residual branch outputs, making the block the identity.
    pub fn zero_branches(&self, store: &mut ParamStore) {
        self.mixer.zero_output(store);
        self.ffn.down.zero(store);
    }
}

/// Pre-norm Transformer encoder block (multi-head softmax self-attention).
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm_attn: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
    pub heads: usize,
    pub d: usize,
}

impl TransformerBlock {
    pub fn new(
        scope: &mut Scope<'_>,
        name: &str,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} attention heads do not divide width {d}"
            )));
        }
        let mut s = scope.sub(name);
        Ok(Self {
            norm_attn: LayerNorm::new(&mut s, "norm_attn", d),
            query: Linear::new(&mut s, "query", d, d, true),
            key: Linear::new(&mut s, "key", d, d, true),
            value: Linear::new(&mut s, "value", d, d, true),
            out: Linear::new(&mut s, "out", d, d, true),
            norm_ffn: LayerNorm::new(&mut s, "norm_ffn", d),
            ffn: FeedForward::new(&mut s, "ffn", d, ffn_hidden, d),
            heads,
            d,
        })
    }

    /// Per-head attention weight matrices `[T×T]` for the normalized input.
    pub fn attention_weights<'t>(
        &self,
        p: &Bound<'t>,
        n: DiffTensor<'t>,
    ) -> Result<Vec<DiffTensor<'t>>> {
        let q = self.query.forward(p, n)?;
        let k = self.key.forward(p, n)?;
        let dh = self.d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        (0..self.heads)
            .map(|h| {
                let qh = q.slice(1, h * dh, (h + 1) * dh)?;
                let kh = k.slice(1, h * dh, (h + 1) * dh)?;
                qh.matmul(kh.transpose()?)?.scale(scale).softmax()
            })
            .collect()
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, h: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        let n = self.norm_attn.forward(p, h)?;
        let v = self.value.forward(p, n)?;
        let dh = self.d / self.heads;
        let heads = self
            .attention_weights(p, n)?
            .into_iter()
            .enumerate()
            .map(|(i, w)| w.matmul(v.slice(1, i * dh, (i + 1) * dh)?))
            .collect::<Result<Vec<_>>>()?;
        let attn = self.out.forward(p, concat(&heads, 1)?)?;
        let h = attn.add(h)?;
        let ff = self.ffn.forward(p, self.norm_ffn.forward(p, h)?)?;
        ff.add(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.norm_attn.params();
        for l in [&self.query, &self.key, &self.value, &self.out] {
            ids.extend(l.params());
        }
        ids.extend(self.norm_ffn.params());
        ids.extend(self.ffn.params());
        ids
    }

    /// Q/K/V/O projections, `2·T²·d` for scores and weighted values, and the FFN.
    pub fn macs(&self, seq_len: usize) -> u64 {
        let proj: u64 = [&self.query, &self.key, &self.value, &self.out]
            .iter()
            .map(|l| l.macs(seq_len))
            .sum();
        proj + (2 * seq_len * seq_len * self.d) as u64 + self.ffn.macs(seq_len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Mamba,
    Transformer,
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BlockKind::Mamba => "mamba",
            BlockKind::Transformer => "transformer",
        })
    }
}

impl std::str::FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mamba" => Ok(BlockKind::Mamba),
            "transformer" => Ok(BlockKind::Transformer),
            other => Err(Error::Config(format!("unknown block type `{other}`"))),
        }
    }
}

/// Either block type behind one interface, so the hierarchy can swap them.
#[derive(Clone, Debug)]
pub enum SequenceBlock {
    Mamba(MambaBlock),
    Transformer(TransformerBlock),
}

impl SequenceBlock {
    pub fn forward<'t>(&self, p: &Bound<'t>, h: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        match self {
            SequenceBlock::Mamba(b) => b.forward(p, h),
            SequenceBlock::Transformer(b) => b.forward(p, h),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            SequenceBlock::Mamba(b) => b.params(),
            SequenceBlock::Transformer(b) => b.params(),
        }
    }

    pub fn macs(&self, seq_len: usize) -> u64 {
        match self {
            SequenceBlock::Mamba(b) => b.macs(seq_len),
            SequenceBlock::Transformer(b) => b.macs(seq_len),
        }
    }

    pub fn kind(&self) -> BlockKind {
        match self {
            SequenceBlock::Mamba(_) => BlockKind::Mamba,
            SequenceBlock::Transformer(_) => BlockKind::Transformer,
        }
    }
}
