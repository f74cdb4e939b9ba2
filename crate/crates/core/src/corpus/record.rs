use serde::{Deserialize, Serialize};

use super::inventory::PhoneInventory;
use crate::error::{Error, Result};

pub const WORD_ASPECTS: usize = 3;
pub const UTTERANCE_ASPECTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Phone,
    Word,
    Utterance,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Phone, Granularity::Word, Granularity::Utterance];

    pub fn aspect_count(self) -> usize {
        match self {
            Granularity::Phone => 1,
            Granularity::Word => WORD_ASPECTS,
            Granularity::Utterance => UTTERANCE_ASPECTS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Granularity::Phone => "phone",
            Granularity::Word => "word",
            Granularity::Utterance => "utterance",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl AspectRange {
    fn new(name: &str, min: f64, max: f64) -> Self {
        Self {
            name: name.to_string(),
            min,
            max,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x.is_finite() && x >= self.min && x <= self.max
    }
}

/// Declared raw score ranges per granularity and aspect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRanges {
    pub phone: Vec<AspectRange>,
    pub word: Vec<AspectRange>,
    pub utterance: Vec<AspectRange>,
}

impl Default for ScoreRanges {
    fn default() -> Self {
        Self {
            phone: vec![AspectRange::new("accuracy", 0.0, 2.0)],
            word: ["accuracy", "stress", "total"]
                .iter()
                .map(|n| AspectRange::new(n, 0.0, 10.0))
                .collect(),
            utterance: ["accuracy", "completeness", "fluency", "prosodic", "total"]
                .iter()
                .map(|n| AspectRange::new(n, 0.0, 10.0))
                .collect(),
        }
    }
}

impl ScoreRanges {
    pub fn get(&self, g: Granularity) -> &[AspectRange] {
        match g {
            Granularity::Phone => &self.phone,
            Granularity::Word => &self.word,
            Granularity::Utterance => &self.utterance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for g in Granularity::ALL {
            let r = self.get(g);
            if r.len() != g.aspect_count() {
                return Err(Error::Config(format!(
                    "{} scores need {} aspect ranges, header declares {}",
                    g.name(),
                    g.aspect_count(),
                    r.len()
                )));
            }
            for a in r {
                if !(a.min.is_finite() && a.max.is_finite() && a.max > a.min) {
                    return Err(Error::Config(format!(
                        "{} aspect `{}` has empty range [{}, {}]",
                        g.name(),
                        a.name,
                        a.min,
                        a.max
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    /// First canonical position of the word.
    pub start: usize,
    /// One past the last position.
    pub end: usize,
    /// Accuracy, stress, total.
    pub scores: [f64; WORD_ASPECTS],
}

impl Word {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn positions(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Hidden generator variables; present only in synthetic corpora.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    /// Pronunciation quality in `[0, 1]` per non-silence position.
    pub quality: Vec<Option<f64>>,
    /// Additive stress offset per word.
    pub stress_jitter: Vec<f64>,
    /// Additive offset per utterance aspect.
    pub utterance_noise: [f64; UTTERANCE_ASPECTS],
}

/// One aligned utterance. Phones are stored as inventory ids.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    /// Canonical ids, including SIL positions.
    pub canonical: Vec<usize>,
    /// Seconds at SIL positions, `None` elsewhere.
    pub sil_durations: Vec<Option<f64>>,
    /// Partition of the non-silence positions into contiguous words.
    pub words: Vec<Word>,
    /// Annotated class id at non-silence positions.
    pub realized: Vec<Option<usize>>,
    /// Phone accuracy at non-silence positions.
    pub phone_scores: Vec<Option<f64>>,
    pub utterance_scores: [f64; UTTERANCE_ASPECTS],
    pub latent: Option<Latent>,
}

impl UtteranceRecord {
    pub fn len(&self) -> usize {
        self.canonical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }

    fn structure(&self, msg: impl Into<String>) -> Error {
        Error::Structure {
            utt_id: self.utt_id.clone(),
            msg: msg.into(),
        }
    }

    /// Word index for every position; `None` at silences.
    pub fn word_of_position(&self) -> Vec<Option<usize>> {
        let n = self.len();
        let mut out = vec![None; n];
        for (w, word) in self.words.iter().enumerate() {
            for t in word.positions().filter(|&t| t < n) {
                out[t] = Some(w);
            }
        }
        out
    }

    /// Checks every structural and range invariant, returning all problems found.
    pub fn problems(&self, inv: &PhoneInventory, ranges: &ScoreRanges) -> Vec<String> {
        let n = self.len();
        let mut out = Vec::new();
        if n == 0 {
            out.push("no phones".to_string());
            return out;
        }
        for (name, len) in [
            ("sil_durations", self.sil_durations.len()),
            ("realized", self.realized.len()),
            ("phone_scores", self.phone_scores.len()),
        ] {
            if len != n {
                out.push(format!("{name} has {len} entries for {n} phones"));
            }
        }
        if !out.is_empty() {
            return out;
        }
        let sil = inv.sil_id();
        for t in 0..n {
            let c = self.canonical[t];
            if c > sil {
                out.push(format!("canonical id {c} at position {t} is outside the inventory"));
                continue;
            }
            if c == sil {
                match self.sil_durations[t] {
                    Some(d) if d.is_finite() && d >= 0.0 => {}
                    Some(d) => out.push(format!("silence at position {t} has duration {d}")),
                    None => out.push(format!("silence at position {t} has no duration")),
                }
                if self.realized[t].is_some() {
                    out.push(format!("silence at position {t} has a realized phone"));
                }
                if self.phone_scores[t].is_some() {
                    out.push(format!("silence at position {t} has a phone score"));
                }
            } else {
                if self.sil_durations[t].is_some() {
                    out.push(format!("non-silence position {t} has a silence duration"));
                }
                match self.realized[t] {
                    Some(r) if r < inv.num_classes() => {}
                    Some(r) => out.push(format!("realized class {r} at position {t} is outside the inventory")),
                    None => out.push(format!("position {t} has no realized phone")),
                }
                if let Some(s) = self.phone_scores[t] {
                    if !ranges.phone[0].contains(s) {
                        out.push(format!("phone score {s} at position {t} outside declared range"));
                    }
                }
            }
        }
        let mut covered = vec![0usize; n];
        let mut prev_end = 0;
        for (w, word) in self.words.iter().enumerate() {
            if word.is_empty() || word.end > n {
                out.push(format!("word {w} `{}` spans invalid range {}..{}", word.text, word.start, word.end));
                continue;
            }
            if word.start < prev_end {
                out.push(format!("word {w} `{}` overlaps or precedes the previous word", word.text));
            }
            prev_end = word.end;
            for t in word.positions() {
                covered[t] += 1;
                if self.canonical[t] == sil {
                    out.push(format!("word {w} `{}` contains silence at position {t}", word.text));
                }
            }
            for (k, (&s, r)) in word.scores.iter().zip(&ranges.word).enumerate() {
                if !r.contains(s) {
                    out.push(format!("word {w} aspect {k} score {s} outside declared range"));
                }
            }
        }
        for t in 0..n {
            if self.canonical[t] != sil && covered[t] == 0 {
                out.push(format!("position {t} is not covered by any word"));
            }
            if covered[t] > 1 {
                out.push(format!("position {t} belongs to {} words", covered[t]));
            }
        }
        for (k, (&s, r)) in self.utterance_scores.iter().zip(&ranges.utterance).enumerate() {
            if !r.contains(s) {
                out.push(format!("utterance aspect {k} score {s} outside declared range"));
            }
        }
        out
    }

    pub fn validate(&self, inv: &PhoneInventory, ranges: &ScoreRanges) -> Result<()> {
        let p = self.problems(inv, ranges);
        if p.is_empty() {
            Ok(())
        } else {
            Err(self.structure(p.join(", ")))
        }
    }

    /// Positions that carry a realized phone (every non-silence position).
    pub fn scored_mask(&self, inv: &PhoneInventory) -> Vec<bool> {
        self.canonical.iter().map(|&c| !inv.is_sil(c)).collect()
    }

    /// Whether each position is mispronounced; `false` at silences.
    pub fn error_states(&self) -> Vec<bool> {
        self.canonical
            .iter()
            .zip(&self.realized)
            .map(|(&c, r)| matches!(r, Some(r) if *r != c))
            .collect()
    }
}

/// Linear map of every declared range onto `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreScaler {
    ranges: ScoreRanges,
}

impl ScoreScaler {
    pub fn new(ranges: ScoreRanges) -> Result<Self> {
        ranges.validate()?;
        Ok(Self { ranges })
    }

    pub fn ranges(&self) -> &ScoreRanges {
        &self.ranges
    }

    fn range(&self, g: Granularity, aspect: usize) -> Result<&AspectRange> {
        self.ranges.get(g).get(aspect).ok_or_else(|| {
            Error::Config(format!("no declared range for {} aspect {aspect}", g.name()))
        })
    }

    pub fn normalize(&self, g: Granularity, aspect: usize, x: f64) -> Result<f64> {
        let r = self.range(g, aspect)?;
        Ok((x - r.min) / (r.max - r.min))
    }

    pub fn denormalize(&self, g: Granularity, aspect: usize, y: f64) -> Result<f64> {
        let r = self.range(g, aspect)?;
        Ok(r.min + y * (r.max - r.min))
    }

    fn map_record(
        &self,
        rec: &UtteranceRecord,
        f: impl Fn(Granularity, usize, f64) -> Result<f64>,
    ) -> Result<UtteranceRecord> {
        let mut out = rec.clone();
        for s in out.phone_scores.iter_mut().flatten() {
            *s = f(Granularity::Phone, 0, *s)?;
        }
        for w in &mut out.words {
            for (k, s) in w.scores.iter_mut().enumerate() {
                *s = f(Granularity::Word, k, *s)?;
            }
        }
        for (k, s) in out.utterance_scores.iter_mut().enumerate() {
            *s = f(Granularity::Utterance, k, *s)?;
        }
        Ok(out)
    }

    pub fn normalize_record(&self, rec: &UtteranceRecord) -> Result<UtteranceRecord> {
        self.map_record(rec, |g, k, x| self.normalize(g, k, x))
    }

    pub fn denormalize_record(&self, rec: &UtteranceRecord) -> Result<UtteranceRecord> {
        self.map_record(rec, |g, k, x| self.denormalize(g, k, x))
    }
}
