use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::inventory::PhoneInventory;
use super::record::{Latent, ScoreRanges, UtteranceRecord, Word, UTTERANCE_ASPECTS};
use super::synth::GeneratorInfo;
use crate::error::{Error, Result};

pub const CORPUS_FORMAT: &str = "hmamba-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub inventory: PhoneInventory,
    pub score_ranges: ScoreRanges,
    /// Feature file, relative to the corpus file's directory.
    pub feature_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
}

impl CorpusHeader {
    pub fn new(inventory: PhoneInventory, score_ranges: ScoreRanges, feature_file: &str) -> Self {
        Self {
            format: CORPUS_FORMAT.to_string(),
            version: CORPUS_VERSION,
            inventory,
            score_ranges,
            feature_file: feature_file.to_string(),
            generator: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub records: Vec<UtteranceRecord>,
}

impl Corpus {
    pub fn inventory(&self) -> &PhoneInventory {
        &self.header.inventory
    }

    pub fn validate(&self) -> Result<()> {
        self.header.inventory.validate()?;
        self.header.score_ranges.validate()?;
        let mut failures = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for rec in &self.records {
            let mut p = rec.problems(&self.header.inventory, &self.header.score_ranges);
            if !seen.insert(rec.utt_id.as_str()) {
                p.push("duplicate utt_id".to_string());
            }
            if !p.is_empty() {
                failures.push(format!("{}: {}", rec.utt_id, p.join(", ")));
            }
        }
        if failures.is_empty() {
            Ok(())
        } else {
            Err(Error::Corpus(failures))
        }
    }
}

/// On-disk record: phones as symbols, everything position-aligned.
#[derive(Serialize, Deserialize)]
struct RecordLine {
    utt_id: String,
    canonical: Vec<String>,
    sil_durations: Vec<Option<f64>>,
    realized: Vec<Option<String>>,
    phone_scores: Vec<Option<f64>>,
    words: Vec<Word>,
    utterance_scores: [f64; UTTERANCE_ASPECTS],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latent: Option<Latent>,
}

impl RecordLine {
    fn from_record(rec: &UtteranceRecord, inv: &PhoneInventory) -> Self {
        Self {
            utt_id: rec.utt_id.clone(),
            canonical: rec
                .canonical
                .iter()
                .map(|&c| inv.canonical_symbol(c).to_string())
                .collect(),
            sil_durations: rec.sil_durations.clone(),
            realized: rec
                .realized
                .iter()
                .map(|r| r.map(|r| inv.class_symbol(r).to_string()))
                .collect(),
            phone_scores: rec.phone_scores.clone(),
            words: rec.words.clone(),
            utterance_scores: rec.utterance_scores,
            latent: rec.latent.clone(),
        }
    }

    fn into_record(self, inv: &PhoneInventory) -> std::result::Result<UtteranceRecord, String> {
        let mut unknown = Vec::new();
        let canonical = self
            .canonical
            .iter()
            .map(|s| {
                inv.canonical_id(s).unwrap_or_else(|| {
                    unknown.push(format!("unknown canonical phone `{s}`"));
                    0
                })
            })
            .collect();
        let realized = self
            .realized
            .iter()
            .map(|r| {
                r.as_ref().map(|s| {
                    inv.class_id(s).unwrap_or_else(|| {
                        unknown.push(format!("unknown realized phone `{s}`"));
                        0
                    })
                })
            })
            .collect();
        if !unknown.is_empty() {
            return Err(format!("{}: {}", self.utt_id, unknown.join(", ")));
        }
        Ok(UtteranceRecord {
            utt_id: self.utt_id,
            canonical,
            sil_durations: self.sil_durations,
            words: self.words,
            realized,
            phone_scores: self.phone_scores,
            utterance_scores: self.utterance_scores,
            latent: self.latent,
        })
    }
}

/// Reads a header line followed by one record per line, then validates all
/// records, reporting every offending utterance at once.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header: CorpusHeader = loop {
        match lines.next() {
            None => return Err(Error::Config(format!("{}: empty corpus file", path.display()))),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|source| Error::Json {
                    path: path.to_path_buf(),
                    line: i + 1,
                    source,
                })?;
            }
        }
    };
    if header.format != CORPUS_FORMAT || header.version != CORPUS_VERSION {
        return Err(Error::Config(format!(
            "{}: expected {CORPUS_FORMAT} v{CORPUS_VERSION}, found {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    header.inventory.validate()?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine = serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        match raw.into_record(&header.inventory) {
            Ok(r) => records.push(r),
            Err(msg) => failures.push(msg),
        }
    }
    let corpus = Corpus { header, records };
    match corpus.validate() {
        Err(Error::Corpus(mut more)) => {
            failures.append(&mut more);
            Err(Error::Corpus(failures))
        }
        Err(e) => Err(e),
        Ok(()) if failures.is_empty() => Ok(corpus),
        Ok(()) => Err(Error::Corpus(failures)),
    }
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write_line = |s: String| writeln!(w, "{s}").map_err(|e| Error::io(path, e));
    write_line(serde_json::to_string(&corpus.header)?)?;
    for rec in &corpus.records {
        write_line(serde_json::to_string(&RecordLine::from_record(rec, &corpus.header.inventory))?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
