use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Granularity, ScoreScaler, UTTERANCE_ASPECTS, WORD_ASPECTS};
use crate::error::Result;
use crate::features::FeatureTable;
use crate::metrics::{EvalAccumulator, EvalReport};
use crate::model::{aggregate_word_predictions, HMambaModel};

/// Denormalized predictions for one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtterancePrediction {
    pub utt_id: String,
    pub phone: Vec<f64>,
    pub word: Vec<[f64; WORD_ASPECTS]>,
    pub utterance: [f64; UTTERANCE_ASPECTS],
    pub diagnosis: Vec<usize>,
    pub error_states: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<UtterancePrediction>,
}

/// Scores every record of `corpus` and pools the metrics.
///
/// Phone metrics cover labelled non-silence phones, word metrics use the mean
/// per-phone prediction over each word, and MDD metrics skip silences and
/// positions without an annotated realized phone.
pub fn evaluate(model: &HMambaModel, corpus: &Corpus, features: &FeatureTable, seed: u64) -> Result<Evaluation> {
    let cfg = &model.config;
    let scaler = ScoreScaler::new(cfg.score_ranges.clone())?;
    let inv = &cfg.inventory;
    let mut acc = EvalAccumulator::new(&cfg.score_ranges, inv.del_id());
    let mut predictions = Vec::with_capacity(corpus.records.len());
    for rec in &corpus.records {
        let out = model.predict(rec, features.get(&rec.utt_id)?)?;
        let phone = out
            .phone_scores
            .iter()
            .map(|&y| scaler.denormalize(Granularity::Phone, 0, y))
            .collect::<Result<Vec<_>>>()?;
        let word = aggregate_word_predictions(&out.word_scores_per_phone, rec)?
            .into_iter()
            .map(|w| {
                let mut r = [0.0; WORD_ASPECTS];
                for k in 0..WORD_ASPECTS {
                    r[k] = scaler.denormalize(Granularity::Word, k, w[k])?;
                }
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut utterance = [0.0; UTTERANCE_ASPECTS];
        for k in 0..UTTERANCE_ASPECTS {
            utterance[k] = scaler.denormalize(Granularity::Utterance, k, out.utterance_scores[k])?;
        }

        for (t, s) in rec.phone_scores.iter().enumerate() {
            if let Some(s) = s {
                acc.push_score(Granularity::Phone, 0, phone[t], *s);
            }
        }
        for (w, pred) in rec.words.iter().zip(&word) {
            for k in 0..WORD_ASPECTS {
                acc.push_score(Granularity::Word, k, pred[k], w.scores[k]);
            }
        }
        for k in 0..UTTERANCE_ASPECTS {
            acc.push_score(Granularity::Utterance, k, utterance[k], rec.utterance_scores[k]);
        }
        let mask: Vec<bool> = rec
            .canonical
            .iter()
            .zip(&rec.realized)
            .map(|(&c, r)| !inv.is_sil(c) && r.is_some())
            .collect();
        let realized: Vec<usize> = rec.realized.iter().map(|r| r.unwrap_or(inv.del_id())).collect();
        acc.push_mdd(&out.diagnosis, &rec.canonical, &realized, &mask);

        predictions.push(UtterancePrediction {
            utt_id: rec.utt_id.clone(),
            phone,
            word,
            utterance,
            diagnosis: out.diagnosis,
            error_states: out.error_states,
        });
    }
    Ok(Evaluation {
        report: acc.finish(seed)?,
        predictions,
    })
}
