//! Aligned utterance records, the phone inventory, score scaling and the
//! synthetic corpus generator.

mod inventory;
mod io;
mod record;
mod synth;

use std::path::Path;

pub use inventory::{PhoneInventory, CMU_PHONES, DEL, L2_PHONES, SIL, UNK};
pub use io::{load_corpus, save_corpus, Corpus, CorpusHeader, CORPUS_FORMAT, CORPUS_VERSION};
pub use record::{
    AspectRange, Granularity, Latent, ScoreRanges, ScoreScaler, UtteranceRecord, Word,
    UTTERANCE_ASPECTS, WORD_ASPECTS,
};
pub use synth::{
    bayes_ceiling, generate_synthetic, planted_scores, synthetic_manifest, CeilingReport,
    GeneratorInfo, PlantedScores, SynthConfig, SyntheticData, FEATURE_FILE, GOP_DIM, SSL_DIM,
};

use crate::error::{Error, Result};
use crate::features::{load_features, save_features, FeatureTable};

pub const TRAIN_FILE: &str = "corpus_train.jsonl";
pub const TEST_FILE: &str = "corpus_test.jsonl";

/// A data directory: train and test corpora sharing one feature file.
pub struct DataSet {
    pub train: Corpus,
    pub test: Corpus,
    pub features: FeatureTable,
}

impl DataSet {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let train = load_corpus(dir.join(TRAIN_FILE))?;
        let test = load_corpus(dir.join(TEST_FILE))?;
        if train.header.inventory != test.header.inventory
            || train.header.score_ranges != test.header.score_ranges
        {
            return Err(Error::Config(
                "train and test corpora declare different inventories or score ranges".into(),
            ));
        }
        let features = load_features(dir.join(&train.header.feature_file))?;
        for rec in train.records.iter().chain(&test.records) {
            for block in features.get(&rec.utt_id)? {
                let got = block.rows.shape()[0];
                if got != rec.len() {
                    return Err(Error::Alignment {
                        provider: block.provider.name.clone(),
                        expected: rec.len(),
                        got,
                    });
                }
            }
        }
        Ok(Self {
            train,
            test,
            features,
        })
    }

    pub fn from_synthetic(data: &SyntheticData) -> Result<Self> {
        Ok(Self {
            train: data.train.clone(),
            test: data.test.clone(),
            features: data.feature_table()?,
        })
    }
}

/// Writes a synthetic data set in the data-directory layout.
pub fn write_synthetic(data: &SyntheticData, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_corpus(&data.train, dir.join(TRAIN_FILE))?;
    save_corpus(&data.test, dir.join(TEST_FILE))?;
    save_features(&data.features, dir.join(FEATURE_FILE))
}
