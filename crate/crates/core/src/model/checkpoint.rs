use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HMambaConfig, HMambaModel};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::params::ParamGroup;

pub const CHECKPOINT_FORMAT: &str = "hmamba-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal `u128` word position.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: HMambaConfig,
    pub step: usize,
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<RngState>,
    /// Effective run configuration of the producing command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
    pub params: Vec<NamedParam>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: 1,
            source,
        })?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                ck.format, ck.version
            )));
        }
        Ok(ck)
    }
}

impl HMambaModel {
    pub fn to_checkpoint(&self, step: usize, epoch: usize, rng: Option<&ChaCha8Rng>) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            step,
            epoch,
            rng: rng.map(RngState::capture),
            run_config: None,
            params: self
                .store
                .iter()
                .map(|(_, p)| NamedParam {
                    name: p.name.clone(),
                    group: p.group,
                    shape: p.value.shape().to_vec(),
                    data: p.value.to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the architecture from the stored config and loads every
    /// parameter, checking names and shapes.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = HMambaModel::new(ck.config.clone(), 0)?;
        if ck.params.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameter arrays, configuration expects {}",
                ck.params.len(),
                model.store.len()
            )));
        }
        for np in &ck.params {
            let id = model
                .store
                .find(&np.name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{}`", np.name)))?;
            let want = model.store.get(id).shape().to_vec();
            if np.shape != want {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, configuration expects {want:?}",
                    np.name, np.shape
                )));
            }
            let t = Tensor::new(np.shape.clone(), np.data.clone())
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", np.name)))?;
            model.store.set(id, t);
        }
        Ok(model)
    }
}
