use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{manifest_width, FeatureProvider, ProviderBlock};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One line of the precomputed-feature file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub utt_id: String,
    pub providers: Vec<FeatureProvider>,
    /// `N` rows, each the concatenation of every provider's columns.
    pub rows: Vec<Vec<f64>>,
}

impl FeatureRecord {
    /// Splits the rows into per-provider blocks, checking every row width.
    pub fn blocks(&self) -> Result<Vec<ProviderBlock>> {
        let width = manifest_width(&self.providers);
        if let Some((t, row)) = self.rows.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(Error::Structure {
                utt_id: self.utt_id.clone(),
                msg: format!("feature row {t} has {} values, manifest declares {width}", row.len()),
            });
        }
        let n = self.rows.len();
        let mut offset = 0;
        self.providers
            .iter()
            .map(|p| {
                let data = self
                    .rows
                    .iter()
                    .flat_map(|r| r[offset..offset + p.dim].iter().copied())
                    .collect();
                offset += p.dim;
                Ok(ProviderBlock {
                    provider: p.clone(),
                    rows: Tensor::new(vec![n, p.dim], data)?,
                })
            })
            .collect()
    }
}

/// All feature records of a file, keyed by utterance, sharing one manifest.
#[derive(Clone, Debug, Default)]
pub struct FeatureTable {
    pub manifest: Vec<FeatureProvider>,
    blocks: HashMap<String, Vec<ProviderBlock>>,
}

impl FeatureTable {
    pub fn from_records(records: &[FeatureRecord]) -> Result<Self> {
        let manifest = records.first().map(|r| r.providers.clone()).unwrap_or_default();
        let mut blocks = HashMap::with_capacity(records.len());
        for rec in records {
            if rec.providers != manifest {
                return Err(Error::Structure {
                    utt_id: rec.utt_id.clone(),
                    msg: "feature providers differ from the file manifest".to_string(),
                });
            }
            if blocks.insert(rec.utt_id.clone(), rec.blocks()?).is_some() {
                return Err(Error::Structure {
                    utt_id: rec.utt_id.clone(),
                    msg: "duplicate feature record".to_string(),
                });
            }
        }
        Ok(Self { manifest, blocks })
    }

    pub fn get(&self, utt_id: &str) -> Result<&[ProviderBlock]> {
        self.blocks
            .get(utt_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Structure {
                utt_id: utt_id.to_string(),
                msg: "no feature record".to_string(),
            })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn width(&self) -> usize {
        manifest_width(&self.manifest)
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    FeatureTable::from_records(&records)
}

pub fn save_features(records: &[FeatureRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec)?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
