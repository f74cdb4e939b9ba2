use serde::{Deserialize, Serialize};

use crate::corpus::{DataSet, PhoneInventory, ScoreRanges};
use crate::error::{Error, Result};
use crate::features::{manifest_width, FeatureProvider, LONG_SILENCE_SECS};
use crate::ssm::{BlockKind, BlockSpec, SsmConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HMambaConfig {
    /// Hidden width of every block.
    pub d: usize,
    pub phone_blocks: usize,
    pub word_blocks: usize,
    pub utterance_blocks: usize,
    pub block: BlockKind,
    pub ssm: SsmConfig,
    pub mamba_ffn_mult: usize,
    pub transformer_ffn_mult: usize,
    pub heads: usize,
    pub word_conv_kernels: usize,
    pub word_conv_size: usize,
    /// Attention-pooling temperature.
    pub tau: f64,
    pub head_hidden: usize,
    /// Rows of the absolute position table.
    pub max_len: usize,
    pub long_silence: f64,
    pub manifest: Vec<FeatureProvider>,
    pub inventory: PhoneInventory,
    pub score_ranges: ScoreRanges,
}

impl Default for HMambaConfig {
    fn default() -> Self {
        Self {
            d: 128,
            phone_blocks: 3,
            word_blocks: 1,
            utterance_blocks: 1,
            block: BlockKind::Mamba,
            ssm: SsmConfig::default(),
            mamba_ffn_mult: 1,
            transformer_ffn_mult: 4,
            heads: 4,
            word_conv_kernels: 256,
            word_conv_size: 3,
            tau: 1.0,
            head_hidden: 32,
            max_len: 256,
            long_silence: LONG_SILENCE_SECS,
            manifest: Vec::new(),
            inventory: PhoneInventory::default(),
            score_ranges: ScoreRanges::default(),
        }
    }
}

impl HMambaConfig {
    /// Takes the inventory, score ranges and feature manifest from a data set.
    pub fn with_data(mut self, data: &DataSet) -> Self {
        self.manifest = data.features.manifest.clone();
        self.inventory = data.train.header.inventory.clone();
        self.score_ranges = data.train.header.score_ranges.clone();
        self
    }

    pub fn feature_width(&self) -> usize {
        manifest_width(&self.manifest)
    }

    pub fn block_spec(&self) -> BlockSpec {
        BlockSpec {
            kind: self.block,
            d: self.d,
            ssm: self.ssm.clone(),
            mamba_ffn_mult: self.mamba_ffn_mult,
            transformer_ffn_mult: self.transformer_ffn_mult,
            heads: self.heads,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("ssm.d_state", self.ssm.d_state),
            ("ssm.expand", self.ssm.expand),
            ("ssm.conv_kernel", self.ssm.conv_kernel),
            ("mamba_ffn_mult", self.mamba_ffn_mult),
            ("transformer_ffn_mult", self.transformer_ffn_mult),
            ("word_conv_kernels", self.word_conv_kernels),
            ("word_conv_size", self.word_conv_size),
            ("head_hidden", self.head_hidden),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.block == BlockKind::Transformer && (self.heads == 0 || self.d % self.heads != 0) {
            return Err(Error::Config(format!(
                "model.heads = {} does not divide model.d = {}",
                self.heads, self.d
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("model.tau = {} must be positive", self.tau)));
        }
        if self.manifest.is_empty() || self.manifest.iter().any(|p| p.dim == 0) {
            return Err(Error::Config("model needs a non-empty feature manifest".into()));
        }
        self.inventory.validate()?;
        self.score_ranges.validate()
    }
}
