use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CMU_PHONES: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH",
    "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH",
    "UW", "V", "W", "Y", "Z", "ZH",
];

/// Placeholder names for the learner-specific phones; real corpora declare their own.
pub const L2_PHONES: [&str; 6] = ["L2_1", "L2_2", "L2_3", "L2_4", "L2_5", "L2_6"];

pub const SIL: &str = "SIL";
pub const UNK: &str = "[unk]";
pub const DEL: &str = "[DEL]";

/// Canonical vocabulary (embedding rows) and annotation classes (classifier outputs).
///
/// Canonical ids are `0..k` for the dictionary phones followed by SIL at `k`.
/// Class ids are the annotation phones in order followed by `[DEL]`. The
/// dictionary phones must be a prefix of the annotation set so a canonical id
/// and its class id coincide.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneInventory {
    /// Dictionary phones, without SIL.
    pub canonical: Vec<String>,
    pub sil: String,
    /// Annotation phones, without `[DEL]`.
    pub annotation: Vec<String>,
    pub del: String,
}

impl Default for PhoneInventory {
    fn default() -> Self {
        let canonical: Vec<String> = CMU_PHONES.iter().map(|s| s.to_string()).collect();
        let mut annotation = canonical.clone();
        annotation.extend(L2_PHONES.iter().map(|s| s.to_string()));
        annotation.push(UNK.to_string());
        Self {
            canonical,
            sil: SIL.to_string(),
            annotation,
            del: DEL.to_string(),
        }
    }
}

impl PhoneInventory {
    pub fn validate(&self) -> Result<()> {
        if self.canonical.is_empty() {
            return Err(Error::Config("inventory has no canonical phones".into()));
        }
        if self.annotation.len() < self.canonical.len()
            || self.annotation[..self.canonical.len()] != self.canonical[..]
        {
            return Err(Error::Config(
                "canonical phones must be a prefix of the annotation set".into(),
            ));
        }
        let mut all: Vec<&String> = self.annotation.iter().collect();
        all.push(&self.sil);
        all.push(&self.del);
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != all.len() {
            return Err(Error::Config("duplicate phone symbol in inventory".into()));
        }
        Ok(())
    }

    /// Embedding vocabulary size: dictionary phones plus SIL.
    pub fn vocab_size(&self) -> usize {
        self.canonical.len() + 1
    }

    /// Classifier width: annotation phones plus `[DEL]`.
    pub fn num_classes(&self) -> usize {
        self.annotation.len() + 1
    }

    pub fn sil_id(&self) -> usize {
        self.canonical.len()
    }

    pub fn del_id(&self) -> usize {
        self.annotation.len()
    }

    pub fn is_sil(&self, canonical_id: usize) -> bool {
        canonical_id == self.sil_id()
    }

    pub fn canonical_id(&self, symbol: &str) -> Option<usize> {
        if symbol == self.sil {
            return Some(self.sil_id());
        }
        self.canonical.iter().position(|p| p == symbol)
    }

    pub fn class_id(&self, symbol: &str) -> Option<usize> {
        if symbol == self.del {
            return Some(self.del_id());
        }
        self.annotation.iter().position(|p| p == symbol)
    }

    pub fn canonical_symbol(&self, id: usize) -> &str {
        if id == self.sil_id() {
            &self.sil
        } else {
            &self.canonical[id]
        }
    }

    pub fn class_symbol(&self, id: usize) -> &str {
        if id == self.del_id() {
            &self.del
        } else {
            &self.annotation[id]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes() {
        let inv = PhoneInventory::default();
        inv.validate().unwrap();
        assert_eq!(inv.vocab_size(), 40);
        assert_eq!(inv.annotation.len(), 46);
        assert_eq!(inv.num_classes(), 47);
        assert_eq!(inv.class_id("K"), inv.canonical_id("K"));
        assert_eq!(inv.class_id(SIL), None);
        assert_eq!(inv.class_id(DEL), Some(46));
    }
}
