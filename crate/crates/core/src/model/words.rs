use crate::corpus::{PhoneInventory, UtteranceRecord, WORD_ASPECTS};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Copies each word's scores onto its phones; silences get `None`.
pub fn broadcast_word_targets(
    record: &UtteranceRecord,
    inv: &PhoneInventory,
) -> Result<Vec<Option<[f64; WORD_ASPECTS]>>> {
    let mut out = vec![None; record.len()];
    for word in &record.words {
        if word.is_empty() || word.end > record.len() {
            return Err(Error::Structure {
                utt_id: record.utt_id.clone(),
                msg: format!("word `{}` spans invalid range {}..{}", word.text, word.start, word.end),
            });
        }
        for t in word.positions() {
            out[t] = Some(word.scores);
        }
    }
    for (t, &c) in record.canonical.iter().enumerate() {
        if !inv.is_sil(c) && out[t].is_none() {
            return Err(Error::Structure {
                utt_id: record.utt_id.clone(),
                msg: format!("scored phone at position {t} belongs to no word"),
            });
        }
    }
    Ok(out)
}

/// Mean of the per-phone predictions over each word's positions.
pub fn aggregate_word_predictions(
    per_phone: &[[f64; WORD_ASPECTS]],
    record: &UtteranceRecord,
) -> Result<Vec<[f64; WORD_ASPECTS]>> {
    record
        .words
        .iter()
        .map(|word| {
            if word.is_empty() || word.end > per_phone.len() {
                return Err(Error::Structure {
                    utt_id: record.utt_id.clone(),
                    msg: format!("word `{}` spans invalid range {}..{}", word.text, word.start, word.end),
                });
            }
            let mut acc = [0.0; WORD_ASPECTS];
            for row in &per_phone[word.positions()] {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Ok(acc.map(|a| a / word.len() as f64))
        })
        .collect()
}

/// Argmax class per position (ties go to the lowest id) and whether it differs
/// from the canonical phone. Silences are never flagged.
pub fn diagnose(
    logits: &Tensor,
    record: &UtteranceRecord,
    inv: &PhoneInventory,
) -> Result<(Vec<usize>, Vec<bool>)> {
    let (n, c) = logits.dims2()?;
    if n != record.len() || c != inv.num_classes() {
        return Err(Error::shape("diagnose", logits.shape(), &[record.len(), inv.num_classes()]));
    }
    let diagnosis: Vec<usize> = (0..n)
        .map(|t| {
            let row = logits.row(t);
            (1..c).fold(0, |best, k| if row[k] > row[best] { k } else { best })
        })
        .collect();
    let errors = diagnosis
        .iter()
        .zip(&record.canonical)
        .map(|(&d, &p)| !inv.is_sil(p) && d != p)
        .collect();
    Ok((diagnosis, errors))
}
