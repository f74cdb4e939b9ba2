use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HMambaConfig;
use crate::trainer::TrainConfig;

/// Everything a run needs besides the data: model shape, optimization and
/// seeds. Inventory, score ranges and the feature manifest come from the data
/// set at run time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: HMambaConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: HMambaConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// Every settable key, in the order `to_text` writes them.
pub const KEYS: &[&str] = &[
    "model.d",
    "model.phone_blocks",
    "model.word_blocks",
    "model.utterance_blocks",
    "model.block",
    "model.ssm.d_state",
    "model.ssm.expand",
    "model.ssm.dt_rank",
    "model.ssm.conv_kernel",
    "model.mamba_ffn_mult",
    "model.transformer_ffn_mult",
    "model.heads",
    "model.word_conv_kernels",
    "model.word_conv_size",
    "model.tau",
    "model.head_hidden",
    "model.max_len",
    "model.long_silence",
    "train.epochs",
    "train.batch_size",
    "train.lr_main",
    "train.lr_utt_head",
    "train.warmup_frac",
    "train.hold_frac",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.dev_fraction",
    "train.seeds",
    "loss.omega",
    "loss.alpha",
    "loss.beta",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "model.d" => m.d = parse(key, value)?,
            "model.phone_blocks" => m.phone_blocks = parse(key, value)?,
            "model.word_blocks" => m.word_blocks = parse(key, value)?,
            "model.utterance_blocks" => m.utterance_blocks = parse(key, value)?,
            "model.block" => m.block = value.trim().parse()?,
            "model.ssm.d_state" => m.ssm.d_state = parse(key, value)?,
            "model.ssm.expand" => m.ssm.expand = parse(key, value)?,
            "model.ssm.dt_rank" => {
                m.ssm.dt_rank = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "model.ssm.conv_kernel" => m.ssm.conv_kernel = parse(key, value)?,
            "model.mamba_ffn_mult" => m.mamba_ffn_mult = parse(key, value)?,
            "model.transformer_ffn_mult" => m.transformer_ffn_mult = parse(key, value)?,
            "model.heads" => m.heads = parse(key, value)?,
            "model.word_conv_kernels" => m.word_conv_kernels = parse(key, value)?,
            "model.word_conv_size" => m.word_conv_size = parse(key, value)?,
            "model.tau" => m.tau = parse(key, value)?,
            "model.head_hidden" => m.head_hidden = parse(key, value)?,
            "model.max_len" => m.max_len = parse(key, value)?,
            "model.long_silence" => m.long_silence = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.lr_main" => t.lr_main = parse(key, value)?,
            "train.lr_utt_head" => t.lr_utt_head = parse(key, value)?,
            "train.warmup_frac" => t.schedule.warmup_frac = parse(key, value)?,
            "train.hold_frac" => t.schedule.hold_frac = parse(key, value)?,
            "train.adam_beta1" => t.adam.beta1 = parse(key, value)?,
            "train.adam_beta2" => t.adam.beta2 = parse(key, value)?,
            "train.adam_eps" => t.adam.eps = parse(key, value)?,
            "train.dev_fraction" => t.dev_fraction = parse(key, value)?,
            "train.seeds" => self.seeds = parse_list(key, value)?,
            "loss.omega" => {
                let w: Vec<f64> = parse_list(key, value)?;
                t.loss.omega = match w.as_slice() {
                    [x] => [*x; 3],
                    [a, b, c] => [*a, *b, *c],
                    _ => return Err(Error::Config(format!("{key}: expected 1 or 3 values, got {}", w.len()))),
                };
            }
            "loss.alpha" => t.loss.alpha = parse(key, value)?,
            "loss.beta" => t.loss.beta = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines. `#` starts a comment; blank lines are
    /// ignored; a `[section]` line prefixes the keys that follow it.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            let key = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            self.set(&key, value)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not `key=value`")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Defaults, then the optional file, then `--set` overrides.
    pub fn resolve<S: AsRef<str>>(path: Option<&Path>, overrides: &[S]) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_overrides(overrides)?;
        Ok(cfg)
    }

    /// Checks everything that does not depend on the data set.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("train.seeds is empty".into()));
        }
        self.train.validate()?;
        let mut probe = self.model.clone();
        if probe.manifest.is_empty() {
            probe.manifest = vec![crate::features::FeatureProvider::new("probe", 1, false)];
        }
        probe.validate()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let t = &self.train;
        let join = |v: &[String]| v.join(",");
        Some(match key {
            "model.d" => m.d.to_string(),
            "model.phone_blocks" => m.phone_blocks.to_string(),
            "model.word_blocks" => m.word_blocks.to_string(),
            "model.utterance_blocks" => m.utterance_blocks.to_string(),
            "model.block" => m.block.to_string(),
            "model.ssm.d_state" => m.ssm.d_state.to_string(),
            "model.ssm.expand" => m.ssm.expand.to_string(),
            "model.ssm.dt_rank" => m.ssm.dt_rank.map_or("auto".to_string(), |r| r.to_string()),
            "model.ssm.conv_kernel" => m.ssm.conv_kernel.to_string(),
            "model.mamba_ffn_mult" => m.mamba_ffn_mult.to_string(),
            "model.transformer_ffn_mult" => m.transformer_ffn_mult.to_string(),
            "model.heads" => m.heads.to_string(),
            "model.word_conv_kernels" => m.word_conv_kernels.to_string(),
            "model.word_conv_size" => m.word_conv_size.to_string(),
            "model.tau" => m.tau.to_string(),
            "model.head_hidden" => m.head_hidden.to_string(),
            "model.max_len" => m.max_len.to_string(),
            "model.long_silence" => m.long_silence.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.lr_main" => t.lr_main.to_string(),
            "train.lr_utt_head" => t.lr_utt_head.to_string(),
            "train.warmup_frac" => t.schedule.warmup_frac.to_string(),
            "train.hold_frac" => t.schedule.hold_frac.to_string(),
            "train.adam_beta1" => t.adam.beta1.to_string(),
            "train.adam_beta2" => t.adam.beta2.to_string(),
            "train.adam_eps" => t.adam.eps.to_string(),
            "train.dev_fraction" => t.dev_fraction.to_string(),
            "train.seeds" => join(&self.seeds.iter().map(u64::to_string).collect::<Vec<_>>()),
            "loss.omega" => join(&t.loss.omega.iter().map(f64::to_string).collect::<Vec<_>>()),
            "loss.alpha" => t.loss.alpha.to_string(),
            "loss.beta" => t.loss.beta.to_string(),
            _ => return None,
        })
    }

    /// The config file that reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    /// The effective settings as a flat JSON object, for embedding in outputs.
    pub fn to_json(&self) -> serde_json::Value {
        let map = KEYS
            .iter()
            .map(|k| (k.to_string(), serde_json::Value::String(self.get(k).expect("listed key"))))
            .collect();
        serde_json::Value::Object(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# demo\n[model]\nd = 64\nblock = transformer\n[train]\nseeds = 1,2\nloss.alpha = 0.3\n", "inline")
            .unwrap_err();
        cfg.apply_text("[model]\nd = 64\nblock = transformer\n[train]\nseeds = 1,2\n", "inline").unwrap();
        cfg.apply_overrides(&["loss.omega=0.5", "loss.alpha = 0.3"]).unwrap();
        assert_eq!(cfg.model.d, 64);
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.train.loss.omega, [0.5; 3]);
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), "round-trip").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let err = RunConfig::default().set("model.width", "3").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
