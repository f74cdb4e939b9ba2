use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StatNormal};

use super::inventory::PhoneInventory;
use super::io::{Corpus, CorpusHeader};
use super::record::{Latent, ScoreRanges, UtteranceRecord, Word, UTTERANCE_ASPECTS};
use crate::error::{Error, Result};
use crate::features::{FeatureProvider, FeatureRecord, FeatureTable};
use crate::metrics::{mdd_detection_metrics, pcc, DetectionMetrics};
use crate::rng::substream;

pub const FEATURE_FILE: &str = "features.jsonl";

pub const GOP_DIM: usize = 8;
pub const SSL_DIM: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Mean number of non-silence phones per utterance (actual count varies by ±2).
    pub phones_per_utt: usize,
    pub error_rate: f64,
    /// Standard deviation of the Gaussian noise on every planted feature.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_test: 200,
            phones_per_utt: 12,
            error_rate: 0.15,
            noise: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.error_rate) {
            return Err(Error::Config(format!("error_rate {} outside [0, 1)", self.error_rate)));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(format!("noise {} must be non-negative", self.noise)));
        }
        if self.phones_per_utt == 0 {
            return Err(Error::Config("phones_per_utt must be positive".into()));
        }
        Ok(())
    }
}

/// Generator settings and score formulas, stored in the corpus header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub config: SynthConfig,
    pub formulas: BTreeMap<String, String>,
}

fn formulas() -> BTreeMap<String, String> {
    [
        ("quality", "q ~ U(0.55, 1.0) if realized == canonical else U(0.0, 0.45)"),
        ("phone.accuracy", "2 * q"),
        ("word.accuracy", "10 * mean(q over word)"),
        ("word.stress", "clamp(word.accuracy + stress_jitter[w], 0, 10)"),
        ("word.total", "(word.accuracy + word.stress) / 2"),
        ("utterance[k]", "clamp(mean(word.accuracy) + utterance_noise[k], 0, 10)"),
        ("feature.gop", "q + noise * N(0,1) per column (0 + noise at silence)"),
        ("feature.duration", "silence: its duration; phone: U(0.05, 0.25)"),
        ("feature.energy", "N(0,1)"),
        ("feature.synthetic:phone", "one_hot(realized) + noise * N(0,1) (no one-hot at silence)"),
        ("feature.w2v", "q * v + noise * N(0,1), v a fixed random unit vector"),
        ("silence", "leading and trailing SIL, plus SIL between words with probability 0.25; duration U(0.05, 1.0)"),
        ("error", "realized drawn uniformly from the other classes with probability error_rate"),
        ("jitter", "stress_jitter ~ N(0, 0.5), utterance_noise ~ N(0, 0.5)"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

pub fn synthetic_manifest(inv: &PhoneInventory) -> Vec<FeatureProvider> {
    vec![
        FeatureProvider::new("gop", GOP_DIM, false),
        FeatureProvider::new("duration", 1, false),
        FeatureProvider::new("energy", 2, false),
        FeatureProvider::new("synthetic:phone", inv.num_classes(), false),
        FeatureProvider::new("w2v", SSL_DIM, true),
    ]
}

pub struct SyntheticData {
    pub train: Corpus,
    pub test: Corpus,
    pub features: Vec<FeatureRecord>,
}

impl SyntheticData {
    pub fn feature_table(&self) -> Result<FeatureTable> {
        FeatureTable::from_records(&self.features)
    }
}

fn clamp10(x: f64) -> f64 {
    x.clamp(0.0, 10.0)
}

/// Scores implied by the generator formulas and a record's latent variables.
pub struct PlantedScores {
    pub phone: Vec<Option<f64>>,
    pub word: Vec<[f64; 3]>,
    pub utterance: [f64; UTTERANCE_ASPECTS],
}

pub fn planted_scores(rec: &UtteranceRecord) -> Option<PlantedScores> {
    let lat = rec.latent.as_ref()?;
    let phone = lat.quality.iter().map(|q| q.map(|q| 2.0 * q)).collect();
    let mut word = Vec::with_capacity(rec.words.len());
    let mut acc_sum = 0.0;
    for (w, wd) in rec.words.iter().enumerate() {
        let qs: Vec<f64> = wd.positions().map(|t| lat.quality[t].unwrap_or(0.0)).collect();
        let acc = 10.0 * qs.iter().sum::<f64>() / qs.len() as f64;
        let stress = clamp10(acc + lat.stress_jitter[w]);
        word.push([acc, stress, (acc + stress) / 2.0]);
        acc_sum += acc;
    }
    let base = acc_sum / rec.words.len().max(1) as f64;
    let mut utterance = [0.0; UTTERANCE_ASPECTS];
    for (k, u) in utterance.iter_mut().enumerate() {
        *u = clamp10(base + lat.utterance_noise[k]);
    }
    Some(PlantedScores {
        phone,
        word,
        utterance,
    })
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    inv: &'a PhoneInventory,
    ssl_direction: Vec<f64>,
    jitter: Normal<f64>,
    unit: Normal<f64>,
}

impl Generator<'_> {
    fn utterance<R: Rng>(&self, utt_id: String, rng: &mut R) -> (UtteranceRecord, FeatureRecord) {
        let cfg = self.cfg;
        let inv = self.inv;
        let lo = cfg.phones_per_utt.saturating_sub(2).max(1);
        let n_phones = rng.random_range(lo..=cfg.phones_per_utt + 2);
        let mut word_lens = Vec::new();
        let mut left = n_phones;
        while left > 0 {
            let l = rng.random_range(1..=4usize).min(left);
            word_lens.push(l);
            left -= l;
        }

        let sil = inv.sil_id();
        let mut canonical = Vec::new();
        let mut sil_durations = Vec::new();
        let mut words = Vec::new();
        let push_sil = |canonical: &mut Vec<usize>, durs: &mut Vec<Option<f64>>, rng: &mut R| {
            canonical.push(sil);
            durs.push(Some(rng.random_range(0.05..=1.0)));
        };
        push_sil(&mut canonical, &mut sil_durations, rng);
        for (w, &len) in word_lens.iter().enumerate() {
            if w > 0 && rng.random::<f64>() < 0.25 {
                push_sil(&mut canonical, &mut sil_durations, rng);
            }
            let start = canonical.len();
            for _ in 0..len {
                canonical.push(rng.random_range(0..inv.canonical.len()));
                sil_durations.push(None);
            }
            let text = canonical[start..]
                .iter()
                .map(|&c| inv.canonical_symbol(c).to_lowercase())
                .collect::<String>();
            words.push(Word {
                text,
                start,
                end: start + len,
                scores: [0.0; 3],
            });
        }
        push_sil(&mut canonical, &mut sil_durations, rng);

        let n = canonical.len();
        let n_classes = inv.num_classes();
        let mut realized = vec![None; n];
        let mut quality = vec![None; n];
        for t in 0..n {
            let c = canonical[t];
            if c == sil {
                continue;
            }
            let r = if rng.random::<f64>() < cfg.error_rate {
                let k = rng.random_range(0..n_classes - 1);
                if k >= c {
                    k + 1
                } else {
                    k
                }
            } else {
                c
            };
            realized[t] = Some(r);
            quality[t] = Some(if r == c {
                rng.random_range(0.55..=1.0)
            } else {
                rng.random_range(0.0..=0.45)
            });
        }
        let stress_jitter: Vec<f64> = words.iter().map(|_| self.jitter.sample(rng)).collect();
        let mut utterance_noise = [0.0; UTTERANCE_ASPECTS];
        for u in &mut utterance_noise {
            *u = self.jitter.sample(rng);
        }

        let mut rec = UtteranceRecord {
            utt_id: utt_id.clone(),
            canonical,
            sil_durations,
            words,
            realized,
            phone_scores: vec![None; n],
            utterance_scores: [0.0; UTTERANCE_ASPECTS],
            latent: Some(Latent {
                quality,
                stress_jitter,
                utterance_noise,
            }),
        };
        let planted = planted_scores(&rec).expect("latent present");
        rec.phone_scores = planted.phone;
        for (w, s) in rec.words.iter_mut().zip(planted.word) {
            w.scores = s;
        }
        rec.utterance_scores = planted.utterance;

        let features = self.features(&rec, rng);
        (rec, features)
    }

    fn features<R: Rng>(&self, rec: &UtteranceRecord, rng: &mut R) -> FeatureRecord {
        let manifest = synthetic_manifest(self.inv);
        let noise = self.cfg.noise;
        let lat = rec.latent.as_ref().expect("latent present");
        let eps = |rng: &mut R| noise * self.unit.sample(rng);
        let rows = (0..rec.len())
            .map(|t| {
                let q = lat.quality[t];
                let mut row = Vec::with_capacity(manifest.iter().map(|p| p.dim).sum());
                for _ in 0..GOP_DIM {
                    row.push(q.unwrap_or(0.0) + eps(rng));
                }
                row.push(match rec.sil_durations[t] {
                    Some(d) => d,
                    None => rng.random_range(0.05..=0.25),
                });
                for _ in 0..2 {
                    row.push(self.unit.sample(rng));
                }
                for k in 0..self.inv.num_classes() {
                    let hot = if rec.realized[t] == Some(k) { 1.0 } else { 0.0 };
                    row.push(hot + eps(rng));
                }
                for v in &self.ssl_direction {
                    row.push(q.unwrap_or(0.0) * v + eps(rng));
                }
                row
            })
            .collect();
        FeatureRecord {
            utt_id: rec.utt_id.clone(),
            providers: manifest,
            rows,
        }
    }
}

/// Fixed unit vector along which the SSL block carries quality.
fn ssl_direction(seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, "ssl-direction");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let raw: Vec<f64> = (0..SSL_DIM).map(|_| unit.sample(&mut rng)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.iter().map(|v| v / norm).collect()
}

/// Builds train and test corpora with planted, learnable signal. The output
/// depends only on `cfg`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let inv = PhoneInventory::default();
    let mut rng = substream(cfg.seed, "data");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let gen = Generator {
        cfg,
        inv: &inv,
        ssl_direction: ssl_direction(cfg.seed),
        jitter: Normal::new(0.0, 0.5).expect("jitter"),
        unit,
    };
    let mut features = Vec::with_capacity(cfg.n_train + cfg.n_test);
    let mut split = |prefix: &str, count: usize, rng: &mut _| {
        let mut header = CorpusHeader::new(inv.clone(), ScoreRanges::default(), FEATURE_FILE);
        header.generator = Some(GeneratorInfo {
            config: cfg.clone(),
            formulas: formulas(),
        });
        let records = (0..count)
            .map(|i| {
                let (rec, feat) = gen.utterance(format!("{prefix}_{i:05}"), rng);
                features.push(feat);
                rec
            })
            .collect();
        Corpus { header, records }
    };
    let train = split("train", cfg.n_train, &mut rng);
    let test = split("test", cfg.n_test, &mut rng);
    Ok(SyntheticData {
        train,
        test,
        features,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CeilingReport {
    pub detection: DetectionMetrics,
    pub phone_pcc: f64,
}

/// Likelihood of a quality estimate `qhat ~ N(q, s²)` with `q ~ U(lo, hi)`.
fn uniform_gauss_likelihood(qhat: f64, lo: f64, hi: f64, s: f64) -> f64 {
    if s == 0.0 {
        return if (lo..=hi).contains(&qhat) { 1.0 / (hi - lo) } else { 0.0 };
    }
    let z = StatNormal::new(0.0, 1.0).expect("unit normal");
    ((z.cdf((hi - qhat) / s) - z.cdf((lo - qhat) / s)) / (hi - lo)).max(1e-300)
}

/// Posterior mean of `q ~ U(lo, hi)` given `qhat ~ N(q, s²)`.
fn truncated_mean(qhat: f64, lo: f64, hi: f64, s: f64) -> f64 {
    if s == 0.0 {
        return qhat.clamp(lo, hi);
    }
    let z = StatNormal::new(0.0, 1.0).expect("unit normal");
    let (a, b) = ((lo - qhat) / s, (hi - qhat) / s);
    let mass = z.cdf(b) - z.cdf(a);
    if mass < 1e-300 {
        return qhat.clamp(lo, hi);
    }
    (qhat + s * (z.pdf(a) - z.pdf(b)) / mass).clamp(lo, hi)
}

/// Decodes the planted signal directly with the generator's own model.
///
/// Diagnosis is the MAP class given the one-hot block and the pooled quality
/// estimate (GOP mean and the SSL projection onto its planted direction);
/// phone accuracy is twice the posterior-mean quality.
pub fn bayes_ceiling(corpus: &Corpus, features: &FeatureTable, cfg: &SynthConfig) -> Result<CeilingReport> {
    let inv = corpus.inventory();
    let n_classes = inv.num_classes();
    let manifest = &features.manifest;
    let offset_of = |name: &str| -> Result<usize> {
        let mut off = 0;
        for p in manifest {
            if p.name == name {
                return Ok(off);
            }
            off += p.dim;
        }
        Err(Error::Config(format!("feature table has no `{name}` provider")))
    };
    let (gop_off, hot_off, ssl_off) = (
        offset_of("gop")?,
        offset_of("synthetic:phone")?,
        offset_of("w2v")?,
    );
    let direction = ssl_direction(cfg.seed);
    let var = cfg.noise * cfg.noise;
    // gop mean has variance σ²/8, the SSL projection σ²; pooled precision 9/σ².
    let pooled_sd = cfg.noise / ((GOP_DIM + 1) as f64).sqrt();
    let r = cfg.error_rate;
    let (mut diag, mut canon, mut real, mut mask) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut pred, mut target) = (Vec::new(), Vec::new());
    for rec in &corpus.records {
        let blocks = features.get(&rec.utt_id)?;
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); rec.len()];
        for b in blocks {
            for (t, row) in rows.iter_mut().enumerate() {
                row.extend_from_slice(b.rows.row(t));
            }
        }
        for t in 0..rec.len() {
            let c = rec.canonical[t];
            let row = &rows[t];
            let gop_sum: f64 = row[gop_off..gop_off + GOP_DIM].iter().sum();
            let ssl_proj: f64 = row[ssl_off..ssl_off + SSL_DIM]
                .iter()
                .zip(&direction)
                .map(|(x, v)| x * v)
                .sum();
            let qhat = (gop_sum + ssl_proj) / (GOP_DIM + 1) as f64;
            let like_ok = uniform_gauss_likelihood(qhat, 0.55, 1.0, pooled_sd).ln();
            let like_err = uniform_gauss_likelihood(qhat, 0.0, 0.45, pooled_sd).ln();
            let hot = &row[hot_off..hot_off + n_classes];
            let score = |k: usize| {
                let (prior, q_like) = if k == c {
                    (1.0 - r, like_ok)
                } else {
                    (r / (n_classes - 1) as f64, like_err)
                };
                let ll = if var > 0.0 {
                    hot[k] / var
                } else if hot[k] > 0.5 {
                    1e300
                } else {
                    0.0
                };
                prior.ln() + q_like + ll
            };
            let scores: Vec<f64> = (0..n_classes).map(score).collect();
            let best = (0..n_classes).fold(0, |b, k| if scores[k] > scores[b] { k } else { b });
            let top = scores[best];
            let total: f64 = scores.iter().map(|x| (x - top).exp()).sum();
            let p_ok = (scores[c] - top).exp() / total;
            diag.push(best);
            canon.push(c);
            real.push(rec.realized[t].unwrap_or(c));
            mask.push(!inv.is_sil(c));
            if let Some(s) = rec.phone_scores[t] {
                let q = p_ok * truncated_mean(qhat, 0.55, 1.0, pooled_sd)
                    + (1.0 - p_ok) * truncated_mean(qhat, 0.0, 0.45, pooled_sd);
                pred.push(2.0 * q);
                target.push(s);
            }
        }
    }
    Ok(CeilingReport {
        detection: mdd_detection_metrics(&diag, &canon, &real, &mask)?,
        phone_pcc: pcc(&pred, &target),
    })
}
