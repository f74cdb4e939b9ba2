use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Granularity, ScoreScaler, UtteranceRecord, Word, UTTERANCE_ASPECTS, WORD_ASPECTS};
use crate::error::{Error, Result};
use crate::corpus::PhoneInventory;
use crate::features::{FeatureRecord, FeatureTable};
use crate::model::{aggregate_word_predictions, HMambaModel};

pub const SCORE_FORMAT: &str = "hmamba-score";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Input of the `score` command: one unlabelled utterance with its features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub utt_id: String,
    pub canonical: Vec<String>,
    /// Seconds at SIL positions, `null` elsewhere. Missing means all `null`,
    /// which requires the request to contain no SIL.
    #[serde(default)]
    pub sil_durations: Option<Vec<Option<f64>>>,
    pub words: Vec<WordSpan>,
    pub features: FeatureBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub providers: Vec<crate::features::FeatureProvider>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedScore {
    pub aspect: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredWord {
    pub text: String,
    pub scores: Vec<NamedScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPhone {
    pub canonical: String,
    /// `None` at silences.
    pub diagnosis: Option<String>,
    pub accuracy: Option<f64>,
    pub mispronounced: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredUtterance {
    pub format: String,
    pub utt_id: String,
    pub utterance: Vec<NamedScore>,
    pub words: Vec<ScoredWord>,
    pub phones: Vec<ScoredPhone>,
}

impl ScoreRequest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Drops the labels of a corpus record, keeping what `score` needs.
    pub fn from_record(rec: &UtteranceRecord, inv: &PhoneInventory, features: &FeatureTable) -> Result<Self> {
        let blocks = features.get(&rec.utt_id)?;
        let n = rec.len();
        let rows = (0..n)
            .map(|t| blocks.iter().flat_map(|b| b.rows.row(t).iter().copied()).collect())
            .collect();
        Ok(Self {
            utt_id: rec.utt_id.clone(),
            canonical: rec.canonical.iter().map(|&c| inv.canonical_symbol(c).to_string()).collect(),
            sil_durations: Some(rec.sil_durations.clone()),
            words: rec
                .words
                .iter()
                .map(|w| WordSpan {
                    text: w.text.clone(),
                    start: w.start,
                    end: w.end,
                })
                .collect(),
            features: FeatureBlock {
                providers: blocks.iter().map(|b| b.provider.clone()).collect(),
                rows,
            },
        })
    }

    fn structure(&self, msg: String) -> Error {
        Error::Structure {
            utt_id: self.utt_id.clone(),
            msg,
        }
    }

    /// Builds an unlabelled record against the model's inventory.
    pub fn record(&self, model: &HMambaModel) -> Result<UtteranceRecord> {
        let inv = &model.config.inventory;
        let canonical = self
            .canonical
            .iter()
            .map(|s| {
                inv.canonical_id(s)
                    .ok_or_else(|| self.structure(format!("unknown canonical phone `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = canonical.len();
        let sil_durations = self.sil_durations.clone().unwrap_or_else(|| vec![None; n]);
        if sil_durations.len() != n {
            return Err(self.structure(format!("{} silence durations for {n} phones", sil_durations.len())));
        }
        for (t, (&c, d)) in canonical.iter().zip(&sil_durations).enumerate() {
            match (inv.is_sil(c), d) {
                (true, Some(x)) if x.is_finite() && *x >= 0.0 => {}
                (true, _) => return Err(self.structure(format!("silence at {t} needs a non-negative duration"))),
                (false, Some(_)) => return Err(self.structure(format!("duration given for non-silence position {t}"))),
                (false, None) => {}
            }
        }
        let mut owner = vec![false; n];
        for w in &self.words {
            if w.start >= w.end || w.end > n {
                return Err(self.structure(format!("word `{}` spans invalid range {}..{}", w.text, w.start, w.end)));
            }
            for t in w.start..w.end {
                if inv.is_sil(canonical[t]) || owner[t] {
                    return Err(self.structure(format!("word `{}` overlaps a silence or another word", w.text)));
                }
                owner[t] = true;
            }
        }
        if let Some(t) = (0..n).find(|&t| !inv.is_sil(canonical[t]) && !owner[t]) {
            return Err(self.structure(format!("phone at position {t} belongs to no word")));
        }
        Ok(UtteranceRecord {
            utt_id: self.utt_id.clone(),
            realized: vec![None; n],
            phone_scores: vec![None; n],
            canonical,
            sil_durations,
            words: self
                .words
                .iter()
                .map(|w| Word {
                    text: w.text.clone(),
                    start: w.start,
                    end: w.end,
                    scores: [0.0; WORD_ASPECTS],
                })
                .collect(),
            utterance_scores: [0.0; UTTERANCE_ASPECTS],
            latent: None,
        })
    }

    pub fn score(&self, model: &HMambaModel) -> Result<ScoredUtterance> {
        let cfg = &model.config;
        if self.features.providers != cfg.manifest {
            return Err(Error::Config(format!(
                "{}: feature providers differ from the model's manifest",
                self.utt_id
            )));
        }
        let rec = self.record(model)?;
        if self.features.rows.len() != rec.len() {
            return Err(self.structure(format!("{} feature rows for {} phones", self.features.rows.len(), rec.len())));
        }
        let blocks = FeatureRecord {
            utt_id: self.utt_id.clone(),
            providers: self.features.providers.clone(),
            rows: self.features.rows.clone(),
        }
        .blocks()?;
        let out = model.predict(&rec, &blocks)?;
        let scaler = ScoreScaler::new(cfg.score_ranges.clone())?;
        let ranges = &cfg.score_ranges;
        let inv = &cfg.inventory;

        let utterance = (0..UTTERANCE_ASPECTS)
            .map(|k| {
                Ok(NamedScore {
                    aspect: ranges.utterance[k].name.clone(),
                    score: scaler.denormalize(Granularity::Utterance, k, out.utterance_scores[k])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let words = aggregate_word_predictions(&out.word_scores_per_phone, &rec)?
            .iter()
            .zip(&rec.words)
            .map(|(pred, w)| {
                Ok(ScoredWord {
                    text: w.text.clone(),
                    scores: (0..WORD_ASPECTS)
                        .map(|k| {
                            Ok(NamedScore {
                                aspect: ranges.word[k].name.clone(),
                                score: scaler.denormalize(Granularity::Word, k, pred[k])?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let phones = (0..rec.len())
            .map(|t| {
                let c = rec.canonical[t];
                let sil = inv.is_sil(c);
                Ok(ScoredPhone {
                    canonical: inv.canonical_symbol(c).to_string(),
                    diagnosis: (!sil).then(|| inv.class_symbol(out.diagnosis[t]).to_string()),
                    accuracy: if sil {
                        None
                    } else {
                        Some(scaler.denormalize(Granularity::Phone, 0, out.phone_scores[t])?)
                    },
                    mispronounced: out.error_states[t],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoredUtterance {
            format: SCORE_FORMAT.to_string(),
            utt_id: self.utt_id.clone(),
            utterance,
            words,
            phones,
        })
    }
}

/// Plain-text report: utterance scores, a word table and a phone table
/// marking each position correct (✓) or mispronounced (✗).
pub fn render_score(s: &ScoredUtterance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "utterance {}", s.utt_id);
    for u in &s.utterance {
        let _ = writeln!(out, "  {:<14}{:>6.2}", u.aspect, u.score);
    }
    let _ = write!(out, "\n{:<16}", "word");
    if let Some(w) = s.words.first() {
        for a in &w.scores {
            let _ = write!(out, "{:>10}", a.aspect);
        }
    }
    out.push('\n');
    for w in &s.words {
        let _ = write!(out, "{:<16}", w.text);
        for a in &w.scores {
            let _ = write!(out, "{:>10.2}", a.score);
        }
        out.push('\n');
    }
    let _ = writeln!(out, "\n{:>4}  {:<10}{:<10}{:>9}", "pos", "canonical", "diagnosis", "accuracy");
    for (t, p) in s.phones.iter().enumerate() {
        let diag = p.diagnosis.as_deref().unwrap_or("-");
        let acc = p.accuracy.map_or("-".to_string(), |a| format!("{a:.2}"));
        let mark = match &p.diagnosis {
            None => "",
            Some(_) if p.mispronounced => "  ✗",
            Some(_) => "  ✓",
        };
        let _ = writeln!(out, "{t:>4}  {:<10}{:<10}{acc:>9}{mark}", p.canonical, diag);
    }
    out
}
