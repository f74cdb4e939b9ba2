use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bimamba::SsmConfig;
use super::block::{BlockKind, MambaBlock, SequenceBlock, TransformerBlock};
use crate::error::Result;
use crate::params::{ParamStore, Scope};

/// Parameter count and multiply-accumulates for one block at a sequence length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCost {
    pub block_type: BlockKind,
    pub params: u64,
    pub macs: u64,
    pub seq_len: usize,
}

/// Block hyperparameters used for both construction and accounting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub d: usize,
    pub ssm: SsmConfig,
    /// Mamba FFN hidden width as a multiple of `d`.
    pub mamba_ffn_mult: usize,
    /// Transformer FFN hidden width as a multiple of `d`.
    pub transformer_ffn_mult: usize,
    pub heads: usize,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, d: usize) -> Self {
        Self {
            kind,
            d,
            ssm: SsmConfig::default(),
            mamba_ffn_mult: 1,
            transformer_ffn_mult: 4,
            heads: 4,
        }
    }

    pub fn build(&self, scope: &mut Scope<'_>, name: &str) -> Result<SequenceBlock> {
        Ok(match self.kind {
            BlockKind::Mamba => SequenceBlock::Mamba(MambaBlock::new(
                scope,
                name,
                self.d,
                self.mamba_ffn_mult * self.d,
                &self.ssm,
            )),
            BlockKind::Transformer => SequenceBlock::Transformer(TransformerBlock::new(
                scope,
                name,
                self.d,
                self.heads,
                self.transformer_ffn_mult * self.d,
            )?),
        })
    }
}

/// Builds one block in a scratch store and counts its cost.
pub fn count_params_and_macs(spec: &BlockSpec, seq_len: usize) -> Result<BlockCost> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = spec.build(&mut Scope::new(&mut store, &mut rng), "block")?;
    Ok(BlockCost {
        block_type: spec.kind,
        params: store.numel_of(&block.params()) as u64,
        macs: block.macs(seq_len),
        seq_len,
    })
}
