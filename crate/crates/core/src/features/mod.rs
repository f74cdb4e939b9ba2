//! Per-phone acoustic feature assembly and phonological embeddings.

mod embed;
mod file;

pub use embed::{relative_tokens, PhonologicalEmbeddings, RelToken, LONG_SILENCE_SECS};
pub use file::{load_features, save_features, FeatureRecord, FeatureTable};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::UtteranceRecord;
use crate::error::{Error, Result};
use crate::numerics::{dropout_mask, DiffTensor, Tensor};

pub const SSL_DROPOUT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureProvider {
    pub name: String,
    pub dim: usize,
    pub is_ssl: bool,
}

impl FeatureProvider {
    pub fn new(name: impl Into<String>, dim: usize, is_ssl: bool) -> Self {
        Self {
            name: name.into(),
            dim,
            is_ssl,
        }
    }
}

/// One provider's `[N×dim]` contribution for an utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct ProviderBlock {
    pub provider: FeatureProvider,
    pub rows: Tensor,
}

/// Concatenated per-phone features in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub rows: Tensor,
    pub manifest: Vec<FeatureProvider>,
}

impl FeatureBundle {
    pub fn width(&self) -> usize {
        self.manifest.iter().map(|p| p.dim).sum()
    }

    pub fn len(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn manifest_width(manifest: &[FeatureProvider]) -> usize {
    manifest.iter().map(|p| p.dim).sum()
}

/// Concatenates provider blocks in manifest order. In training mode SSL blocks
/// go through inverted dropout.
pub fn assemble_features<R: Rng + ?Sized>(
    record: &UtteranceRecord,
    blocks: &[ProviderBlock],
    manifest: &[FeatureProvider],
    training: bool,
    rng: &mut R,
) -> Result<FeatureBundle> {
    let n = record.len();
    let width = manifest_width(manifest);
    let mut out = vec![0.0; n * width];
    let mut offset = 0;
    for want in manifest {
        if want.dim == 0 {
            return Err(Error::Config(format!("provider `{}` has zero width", want.name)));
        }
        let block = blocks
            .iter()
            .find(|b| b.provider.name == want.name)
            .ok_or_else(|| Error::Alignment {
                provider: want.name.clone(),
                expected: n,
                got: 0,
            })?;
        if block.provider != *want {
            return Err(Error::Config(format!(
                "provider `{}` declared as {:?}, supplied as {:?}",
                want.name, want, block.provider
            )));
        }
        let (rows, dim) = block.rows.dims2()?;
        if rows != n {
            return Err(Error::Alignment {
                provider: want.name.clone(),
                expected: n,
                got: rows,
            });
        }
        if dim != want.dim {
            return Err(Error::shape("assemble_features", &[n, want.dim], block.rows.shape()));
        }
        let mask = if training && want.is_ssl {
            Some(dropout_mask(n * dim, SSL_DROPOUT, rng)?)
        } else {
            None
        };
        let src = block.rows.data();
        for t in 0..n {
            for j in 0..dim {
                let mut v = src[t * dim + j];
                if let Some(m) = &mask {
                    v *= m[t * dim + j];
                }
                out[t * width + offset + j] = v;
            }
        }
        offset += dim;
    }
    Ok(FeatureBundle {
        rows: Tensor::new(vec![n, width], out)?,
        manifest: manifest.to_vec(),
    })
}

/// Row-wise affine map `x_t = a_t W + b`, with `W` stored `[width×d]`.
pub fn project<'t>(
    bundle: DiffTensor<'t>,
    weight: DiffTensor<'t>,
    bias: DiffTensor<'t>,
) -> Result<DiffTensor<'t>> {
    let (_, width) = bundle.value().dims2()?;
    let ws = weight.shape();
    if ws.len() != 2 || ws[0] != width {
        return Err(Error::shape("project", &bundle.shape(), &ws));
    }
    bundle.matmul(weight)?.add(bias)
}
