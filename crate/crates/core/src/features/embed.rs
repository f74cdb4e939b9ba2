use serde::{Deserialize, Serialize};

use crate::corpus::{PhoneInventory, UtteranceRecord};
use crate::error::{Error, Result};
use crate::numerics::DiffTensor;
use crate::params::{Bound, ParamId, Scope};

/// Silences strictly longer than this are long silences.
pub const LONG_SILENCE_SECS: f64 = 0.495;

/// Within-word position of a phone, or the silence class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelToken {
    B,
    I,
    E,
    S,
    LS,
    SS,
}

impl RelToken {
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_silence(self) -> bool {
        matches!(self, RelToken::LS | RelToken::SS)
    }
}

pub fn relative_tokens(
    record: &UtteranceRecord,
    inv: &PhoneInventory,
    long_sil_threshold: f64,
) -> Result<Vec<RelToken>> {
    let n = record.len();
    let mut out: Vec<Option<RelToken>> = vec![None; n];
    for (t, &c) in record.canonical.iter().enumerate() {
        if inv.is_sil(c) {
            let dur = record.sil_durations.get(t).copied().flatten().ok_or_else(|| {
                Error::Structure {
                    utt_id: record.utt_id.clone(),
                    msg: format!("silence at position {t} has no duration"),
                }
            })?;
            out[t] = Some(if dur > long_sil_threshold {
                RelToken::LS
            } else {
                RelToken::SS
            });
        }
    }
    for word in &record.words {
        if word.is_empty() || word.end > n {
            return Err(Error::Structure {
                utt_id: record.utt_id.clone(),
                msg: format!("word `{}` spans invalid range {}..{}", word.text, word.start, word.end),
            });
        }
        for t in word.positions() {
            out[t] = Some(if word.len() == 1 {
                RelToken::S
            } else if t == word.start {
                RelToken::B
            } else if t + 1 == word.end {
                RelToken::E
            } else {
                RelToken::I
            });
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(t, tok)| {
            tok.ok_or_else(|| Error::Structure {
                utt_id: record.utt_id.clone(),
                msg: format!("position {t} is neither silence nor part of a word"),
            })
        })
        .collect()
}

/// Canonical phone, absolute position and relative position tables.
#[derive(Clone, Debug)]
pub struct PhonologicalEmbeddings {
    pub phone: ParamId,
    pub absolute: ParamId,
    pub relative: ParamId,
    pub capacity: usize,
    pub d: usize,
}

impl PhonologicalEmbeddings {
    pub const INIT_STD: f64 = 0.02;

    pub fn new(scope: &mut Scope<'_>, name: &str, vocab: usize, capacity: usize, d: usize) -> Self {
        let mut s = scope.sub(name);
        let t = s.normal(vec![vocab, d], Self::INIT_STD);
        let phone = s.add("phone", t);
        let t = s.normal(vec![capacity, d], Self::INIT_STD);
        let absolute = s.add("absolute", t);
        let t = s.normal(vec![RelToken::COUNT, d], Self::INIT_STD);
        let relative = s.add("relative", t);
        Self {
            phone,
            absolute,
            relative,
            capacity,
            d,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.phone, self.absolute, self.relative]
    }

    /// `x + E_phn[p] + E_abs[0..N] + E_rel[tokens]`.
    pub fn phone_level_input<'t>(
        &self,
        p: &Bound<'t>,
        x: DiffTensor<'t>,
        canonical: &[usize],
        tokens: &[RelToken],
    ) -> Result<DiffTensor<'t>> {
        let n = canonical.len();
        if n > self.capacity {
            return Err(Error::Capacity {
                len: n,
                capacity: self.capacity,
            });
        }
        if tokens.len() != n {
            return Err(Error::shape("phone_level_input", &[n], &[tokens.len()]));
        }
        let positions: Vec<usize> = (0..n).collect();
        let rel: Vec<usize> = tokens.iter().map(|t| t.index()).collect();
        x.add(p.get(self.phone).gather_rows(canonical)?)?
            .add(p.get(self.absolute).gather_rows(&positions)?)?
            .add(p.get(self.relative).gather_rows(&rel)?)
    }
}
