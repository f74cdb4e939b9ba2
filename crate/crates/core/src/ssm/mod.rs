//! Sequence blocks: selective scan, bidirectional Mamba, and a Transformer baseline.

mod bimamba;
mod block;
mod cost;
mod scan;

pub use bimamba::{BiMambaLayer, Branch, SsmConfig};
pub use block::{BlockKind, MambaBlock, SequenceBlock, TransformerBlock};
pub use cost::{count_params_and_macs, BlockCost, BlockSpec};
pub use scan::{selective_scan, SelectiveSsm, SCAN_MACS_PER_TERM};
