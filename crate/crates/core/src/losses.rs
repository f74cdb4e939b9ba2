//! Multi-granularity regression loss, decoupled cross-entropy and their sum.

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::numerics::{DiffTensor, Tensor};

/// Floor applied to class probabilities before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weights for phone, word and utterance levels.
    pub omega: [f64; 3],
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            omega: [1.0; 3],
            alpha: 0.7,
            beta: 0.003,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.omega.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss.omega weights must be non-negative".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config("loss.beta must be non-negative".into()));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Config("loss.alpha must be finite".into()));
        }
        Ok(())
    }
}

/// Training-set pronunciation frequencies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frequencies {
    pub mu_m: f64,
    pub mu_h: f64,
}

impl Frequencies {
    /// `(μʰ/μᵐ)^α`, the mispronunciation up-weighting.
    pub fn weight(&self, alpha: f64) -> f64 {
        (self.mu_h / self.mu_m).powf(alpha)
    }
}

/// Fraction of scored positions whose realized phone differs from the
/// canonical one. Fails when there are no scored positions or no errors.
pub fn estimate_frequencies(corpus: &Corpus) -> Result<Frequencies> {
    let inv = corpus.inventory();
    let (mut total, mut mis) = (0usize, 0usize);
    for rec in &corpus.records {
        for (t, &c) in rec.canonical.iter().enumerate() {
            if inv.is_sil(c) {
                continue;
            }
            if let Some(r) = rec.realized[t] {
                total += 1;
                if r != c {
                    mis += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("estimate_frequencies", "no scored positions"));
    }
    if mis == 0 {
        return Err(Error::invalid(
            "estimate_frequencies",
            "no mispronunciations in the training set; the decoupled weight is undefined",
        ));
    }
    let mu_m = mis as f64 / total as f64;
    Ok(Frequencies {
        mu_m,
        mu_h: 1.0 - mu_m,
    })
}

/// Predictions and targets of one granularity.
pub struct Level<'t> {
    /// `[n×M]`
    pub pred: DiffTensor<'t>,
    /// `[n×M]`
    pub target: Tensor,
    /// One flag per row; `false` rows are excluded.
    pub mask: Vec<bool>,
}

/// `Σ_g ω_g · (1/M_g) Σ_k MSE_{g,k}`.
///
/// Each level's squared errors are divided by `denominators[g]` rows when
/// given (so per-utterance terms of a batch add up to the batch loss),
/// otherwise by the level's own masked row count. A level with no rows
/// contributes zero.
pub fn apa_loss<'t>(
    levels: &[Level<'t>],
    omega: &[f64],
    denominators: Option<&[usize]>,
) -> Result<DiffTensor<'t>> {
    let tape = levels
        .first()
        .ok_or_else(|| Error::invalid("apa_loss", "no levels"))?
        .pred
        .tape();
    if omega.len() != levels.len() {
        return Err(Error::shape("apa_loss", &[levels.len()], &[omega.len()]));
    }
    let mut total = tape.constant(Tensor::scalar(0.0));
    for (g, level) in levels.iter().enumerate() {
        let shape = level.pred.shape();
        if shape.len() != 2 || level.target.shape() != shape.as_slice() || level.mask.len() != shape[0] {
            return Err(Error::shape("apa_loss", &shape, level.target.shape()));
        }
        let (rows, m) = (shape[0], shape[1]);
        let own = level.mask.iter().filter(|&&b| b).count();
        let denom = denominators.map_or(own, |d| d[g]);
        if own == 0 || denom == 0 {
            if own == 0 {
                log::debug!("apa_loss: level {g} has no scored rows");
            }
            continue;
        }
        let mask: Vec<f64> = level
            .mask
            .iter()
            .flat_map(|&b| std::iter::repeat_n(if b { 1.0 } else { 0.0 }, m))
            .collect();
        let mask = tape.constant(Tensor::new(vec![rows, m], mask)?);
        let diff = level.pred.sub(tape.constant(level.target.clone()))?;
        let sse = diff.square().mul(mask)?.sum();
        total = total.add(sse.scale(omega[g] / (denom as f64 * m as f64)))?;
    }
    Ok(total)
}

/// Summed negative log-likelihoods over correct and mispronounced positions.
pub struct DexentParts<'t> {
    pub hit: DiffTensor<'t>,
    pub mis: DiffTensor<'t>,
}

/// Splits the cross-entropy of `logits` `[N×C]` against `realized` into the
/// positions where `realized == canonical` and the rest.
pub fn dexent_parts<'t>(
    logits: DiffTensor<'t>,
    realized: &[usize],
    canonical: &[usize],
    mask: &[bool],
) -> Result<DexentParts<'t>> {
    let shape = logits.shape();
    let n = shape.first().copied().unwrap_or(0);
    if shape.len() != 2 || realized.len() != n || canonical.len() != n || mask.len() != n {
        return Err(Error::shape("dexent_loss", &shape, &[realized.len()]));
    }
    let tape = logits.tape();
    let nll = logits
        .log_softmax()?
        .clamp_min(PROB_FLOOR.ln())
        .pick(realized)?
        .neg();
    let select = |want_error: bool| -> Result<DiffTensor<'t>> {
        let m: Vec<f64> = (0..n)
            .map(|t| {
                let is_err = realized[t] != canonical[t];
                if mask[t] && is_err == want_error { 1.0 } else { 0.0 }
            })
            .collect();
        Ok(nll.mul(tape.constant(Tensor::vector(m)))?.sum())
    };
    Ok(DexentParts {
        hit: select(false)?,
        mis: select(true)?,
    })
}

/// `(L_hit + weight · L_mis) / denominator`.
pub fn dexent_loss<'t>(parts: &DexentParts<'t>, weight: f64, denominator: f64) -> Result<DiffTensor<'t>> {
    Ok(parts.hit.add(parts.mis.scale(weight))?.scale(1.0 / denominator))
}

/// `L = L_APA + β · L_MDD`.
pub fn total_loss<'t>(apa: DiffTensor<'t>, mdd: DiffTensor<'t>, beta: f64) -> Result<DiffTensor<'t>> {
    apa.add(mdd.scale(beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    #[test]
    fn apa_single_aspect() {
        let tape = Tape::new();
        let level = Level {
            pred: tape.constant(Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap()),
            target: Tensor::zeros(vec![2, 1]),
            mask: vec![true, true],
        };
        let l = apa_loss(&[level], &[1.0], None).unwrap();
        assert_eq!(l.item(), 1.0);
    }

    #[test]
    fn weight_examples() {
        let f = Frequencies { mu_m: 0.1, mu_h: 0.9 };
        assert_eq!(f.weight(0.0), 1.0);
        assert!((f.weight(0.7) - 9f64.powf(0.7)).abs() < 1e-12);
        let eq = Frequencies { mu_m: 0.5, mu_h: 0.5 };
        assert_eq!(eq.weight(0.9), 1.0);
    }
}
