//! Optimization, the training loop, evaluation and the multi-seed protocol.

mod eval;
mod optim;
mod protocol;

pub use eval::{evaluate, Evaluation, UtterancePrediction};
pub use optim::{lr_at, Adam, AdamConfig, Schedule};
pub use protocol::{run_protocol, seed_dir, ProtocolOptions, ProtocolOutcome, CURVES_FILE, REPORT_CSV_FILE, REPORT_FILE};

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Granularity, ScoreScaler, UtteranceRecord, UTTERANCE_ASPECTS, WORD_ASPECTS};
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::losses::{
    apa_loss, dexent_loss, dexent_parts, estimate_frequencies, total_loss, Frequencies, Level,
    LossConfig,
};
use crate::model::{broadcast_word_targets, HMambaModel};
use crate::numerics::{Tape, Tensor};
use crate::params::{Bound, ParamGroup};
use crate::rng::{fnv1a, substream};

pub const HISTORY_FILE: &str = "history.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.json";
pub const BEST_CHECKPOINT: &str = "checkpoint_best.json";
pub const LAST_GOOD_CHECKPOINT: &str = "checkpoint_last_good.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_main: f64,
    pub lr_utt_head: f64,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    /// Fraction of training utterances held out for checkpoint selection.
    pub dev_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr_main: 2e-3,
            lr_utt_head: 9e-5,
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            dev_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch_size must be positive".into()));
        }
        if !(self.lr_main > 0.0 && self.lr_utt_head > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::Config("train.dev_fraction must lie in [0, 1)".into()));
        }
        self.schedule.validate()?;
        self.loss.validate()
    }

    pub fn peak(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Main => self.lr_main,
            ParamGroup::UtteranceHead => self.lr_utt_head,
        }
    }
}

/// Seed-deterministic held-out split: an utterance goes to dev when the hash
/// of `(seed, utt_id)` falls below `fraction`. Never empties the train side.
pub fn split_dev(records: &[UtteranceRecord], seed: u64, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (i, r) in records.iter().enumerate() {
        let key = format!("{seed}:{}", r.utt_id);
        let u = (fnv1a(key.as_bytes()) % 1_000_000) as f64 / 1_000_000.0;
        if u < fraction {
            dev.push(i);
        } else {
            train.push(i);
        }
    }
    if train.is_empty() {
        return (dev, Vec::new());
    }
    (train, dev)
}

/// Normalized targets and masks for one utterance.
pub struct Example {
    pub record: UtteranceRecord,
    pub phone: Tensor,
    pub phone_mask: Vec<bool>,
    pub word: Tensor,
    pub word_mask: Vec<bool>,
    pub utterance: Tensor,
    pub realized: Vec<usize>,
    pub mdd_mask: Vec<bool>,
}

impl Example {
    pub fn new(raw: &UtteranceRecord, scaler: &ScoreScaler, model: &HMambaModel) -> Result<Self> {
        let inv = &model.config.inventory;
        let rec = scaler.normalize_record(raw)?;
        let n = rec.len();
        let phone_mask: Vec<bool> = rec.phone_scores.iter().map(Option::is_some).collect();
        let phone = Tensor::new(vec![n, 1], rec.phone_scores.iter().map(|s| s.unwrap_or(0.0)).collect())?;
        let words = broadcast_word_targets(&rec, inv)?;
        let word_mask = words.iter().map(Option::is_some).collect();
        let word = Tensor::new(
            vec![n, WORD_ASPECTS],
            words.iter().flat_map(|w| w.unwrap_or([0.0; WORD_ASPECTS])).collect(),
        )?;
        let utterance = Tensor::new(vec![1, UTTERANCE_ASPECTS], rec.utterance_scores.to_vec())?;
        let realized = rec.realized.iter().map(|r| r.unwrap_or(0)).collect();
        let mdd_mask = rec
            .canonical
            .iter()
            .zip(&rec.realized)
            .map(|(&c, r)| !inv.is_sil(c) && r.is_some())
            .collect();
        Ok(Self {
            record: rec,
            phone,
            phone_mask,
            word,
            word_mask,
            utterance,
            realized,
            mdd_mask,
        })
    }
}

/// Row counts used to normalize a batch's loss terms.
#[derive(Clone, Copy, Debug, Default)]
pub struct BatchCounts {
    pub phone: usize,
    pub word: usize,
    pub utterance: usize,
    pub mdd: usize,
}

impl BatchCounts {
    pub fn of<'a>(items: impl IntoIterator<Item = &'a Example>) -> Self {
        let mut c = BatchCounts::default();
        for p in items {
            c.phone += p.phone_mask.iter().filter(|&&b| b).count();
            c.word += p.word_mask.iter().filter(|&&b| b).count();
            c.utterance += 1;
            c.mdd += p.mdd_mask.iter().filter(|&&b| b).count();
        }
        c
    }
}

/// Scalar loss components of one utterance, already batch-normalized.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossValues {
    pub apa: f64,
    pub hit: f64,
    pub mis: f64,
    pub mdd: f64,
    pub total: f64,
}

impl std::ops::AddAssign for LossValues {
    fn add_assign(&mut self, o: Self) {
        self.apa += o.apa;
        self.hit += o.hit;
        self.mis += o.mis;
        self.mdd += o.mdd;
        self.total += o.total;
    }
}

/// Builds the loss graph for one utterance and returns the total node.
pub fn utterance_loss<'t>(
    model: &HMambaModel,
    p: &Bound<'t>,
    prep: &Example,
    bundle: &crate::features::FeatureBundle,
    counts: BatchCounts,
    weight: f64,
    cfg: &LossConfig,
) -> Result<(crate::numerics::DiffTensor<'t>, LossValues)> {
    let g = model.forward_graph(p, &prep.record, bundle)?;
    let n = prep.record.len();
    let levels = [
        Level {
            pred: g.phone.reshape(&[n, 1])?,
            target: prep.phone.clone(),
            mask: prep.phone_mask.clone(),
        },
        Level {
            pred: g.word,
            target: prep.word.clone(),
            mask: prep.word_mask.clone(),
        },
        Level {
            pred: g.utterance.reshape(&[1, UTTERANCE_ASPECTS])?,
            target: prep.utterance.clone(),
            mask: vec![true],
        },
    ];
    let apa = apa_loss(&levels, &cfg.omega, Some(&[counts.phone, counts.word, counts.utterance]))?;
    let parts = dexent_parts(g.logits, &prep.realized, &prep.record.canonical, &prep.mdd_mask)?;
    let denom = counts.mdd.max(1) as f64;
    let mdd = dexent_loss(&parts, weight, denom)?;
    let total = total_loss(apa, mdd, cfg.beta)?;
    let values = LossValues {
        apa: apa.item(),
        hit: parts.hit.item() / denom,
        mis: parts.mis.item() / denom,
        mdd: mdd.item(),
        total: total.item(),
    };
    Ok((total, values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub apa: f64,
    pub mdd_hit: f64,
    pub mdd_mis: f64,
    pub weight: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    pub total: f64,
    pub per: f64,
    pub f1: f64,
    pub phone_accuracy_pcc: f64,
    pub word_total_pcc: f64,
    pub utterance_total_pcc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub apa_loss: f64,
    pub mdd_loss: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<DevMetrics>,
}

/// One line of the history file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HistoryRow {
    Config {
        format: String,
        version: u32,
        seed: u64,
        run_config: serde_json::Value,
        frequencies: Option<Frequencies>,
        mdd_weight: f64,
        train_utterances: usize,
        dev_utterances: usize,
    },
    Step(StepLog),
    Epoch(EpochLog),
}

pub const HISTORY_FORMAT: &str = "hmamba-history";
pub const HISTORY_VERSION: u32 = 1;

pub struct TrainOutcome {
    pub model: HMambaModel,
    pub best: HMambaModel,
    pub best_epoch: usize,
    pub history: Vec<HistoryRow>,
}

impl TrainOutcome {
    pub fn epochs(&self) -> impl Iterator<Item = &EpochLog> {
        self.history.iter().filter_map(|r| match r {
            HistoryRow::Epoch(e) => Some(e),
            _ => None,
        })
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepLog> {
        self.history.iter().filter_map(|r| match r {
            HistoryRow::Step(s) => Some(s),
            _ => None,
        })
    }

    /// Plot-ready per-epoch curves: training loss, dev PER, dev phone PCC and
    /// dev word/utterance total PCC.
    pub fn curves_csv(&self) -> String {
        let f = |x: f64| if x.is_finite() { format!("{x}") } else { String::new() };
        let mut out = String::from(
            "epoch,step,train_total,dev_total,dev_per,dev_phone_accuracy_pcc,dev_word_total_pcc,dev_utterance_total_pcc\n",
        );
        for e in self.epochs() {
            let d = e.dev.as_ref();
            let g = |h: fn(&DevMetrics) -> f64| d.map(h).map(f).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.epoch,
                e.step,
                f(e.total),
                g(|d| d.total),
                g(|d| d.per),
                g(|d| d.phone_accuracy_pcc),
                g(|d| d.word_total_pcc),
                g(|d| d.utterance_total_pcc),
            ));
        }
        out
    }
}

/// Mean loss of `items` under the current parameters, without gradients.
fn dataset_loss(
    model: &HMambaModel,
    items: &[Example],
    features: &FeatureTable,
    weight: f64,
    cfg: &LossConfig,
) -> Result<LossValues> {
    let counts = BatchCounts::of(items);
    let mut sum = LossValues::default();
    let mut unused = substream(0, "eval");
    for prep in items {
        let bundle = model.assemble(&prep.record, features.get(&prep.record.utt_id)?, false, &mut unused)?;
        let tape = Tape::new();
        let p = model.store.bind_constants(&tape);
        let (_, v) = utterance_loss(model, &p, prep, &bundle, counts, weight, cfg)?;
        sum += v;
    }
    Ok(sum)
}

fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains `model` on `corpus` (with a held-out dev split) for one seed.
///
/// When `out` is given, writes the history file, the final checkpoint and the
/// best-dev checkpoint there. `run_config` is embedded in every artifact.
pub fn train(
    corpus: &Corpus,
    features: &FeatureTable,
    mut model: HMambaModel,
    cfg: &TrainConfig,
    seed: u64,
    run_config: &serde_json::Value,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let scaler = ScoreScaler::new(model.config.score_ranges.clone())?;
    let (train_idx, dev_idx) = split_dev(&corpus.records, seed, cfg.dev_fraction);
    let prepare = |idx: &[usize]| -> Result<Vec<Example>> {
        idx.iter().map(|&i| Example::new(&corpus.records[i], &scaler, &model)).collect()
    };
    let train_set = prepare(&train_idx)?;
    let dev_set = prepare(&dev_idx)?;

    let train_corpus = Corpus {
        header: corpus.header.clone(),
        records: train_idx.iter().map(|&i| corpus.records[i].clone()).collect(),
    };
    let dev_corpus = Corpus {
        header: corpus.header.clone(),
        records: dev_idx.iter().map(|&i| corpus.records[i].clone()).collect(),
    };
    let frequencies = match estimate_frequencies(&train_corpus) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("decoupled cross-entropy disabled: {e}");
            None
        }
    };
    let weight = frequencies.map_or(1.0, |f| f.weight(cfg.loss.alpha));

    let mut history = vec![HistoryRow::Config {
        format: HISTORY_FORMAT.to_string(),
        version: HISTORY_VERSION,
        seed,
        run_config: run_config.clone(),
        frequencies,
        mdd_weight: weight,
        train_utterances: train_set.len(),
        dev_utterances: dev_set.len(),
    }];

    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut order_rng = substream(seed, "data-order");
    let mut dropout_rng = substream(seed, "dropout");
    let mut adam = Adam::new(&model.store, cfg.adam);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;
    let mut best: Option<(f64, usize, HMambaModel)> = None;
    let save = |m: &HMambaModel, name: &str, step: usize, epoch: usize, rng: &rand_chacha::ChaCha8Rng| -> Result<()> {
        if let Some(dir) = out {
            let mut ck = m.to_checkpoint(step, epoch, Some(rng));
            ck.run_config = Some(run_config.clone());
            ck.save(dir.join(name))?;
        }
        Ok(())
    };

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_sum = LossValues::default();
        let mut lr_main = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let items: Vec<&Example> = batch.iter().map(|&i| &train_set[i]).collect();
            let counts = BatchCounts::of(items.iter().copied());
            let mut grads: Vec<Vec<f64>> = model.store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
            let mut sum = LossValues::default();
            for prep in &items {
                let blocks = features.get(&prep.record.utt_id)?;
                let bundle = model.assemble(&prep.record, blocks, true, &mut dropout_rng)?;
                let tape = Tape::new();
                let p = model.store.bind(&tape);
                let (loss, v) = utterance_loss(&model, &p, prep, &bundle, counts, weight, &cfg.loss)?;
                tape.backward(loss)?;
                for (acc, g) in grads.iter_mut().zip(p.grads()) {
                    for (a, x) in acc.iter_mut().zip(g.data()) {
                        *a += x;
                    }
                }
                sum += v;
            }
            if !sum.total.is_finite() {
                save(&model, LAST_GOOD_CHECKPOINT, step - 1, epoch, &order_rng)?;
                if let Some(dir) = out {
                    write_history(&dir.join(HISTORY_FILE), &history)?;
                }
                return Err(Error::Diverged { step, loss: sum.total });
            }
            lr_main = cfg.schedule.lr_at(step as f64, total_steps, cfg.lr_main)?;
            let sched = cfg.schedule;
            adam.step(&mut model.store, &grads, |g| {
                sched.lr_at(step as f64, total_steps, cfg.peak(g)).unwrap_or(0.0)
            })?;
            history.push(HistoryRow::Step(StepLog {
                step,
                apa: sum.apa,
                mdd_hit: sum.hit,
                mdd_mis: sum.mis,
                weight,
                total: sum.total,
            }));
            let share = items.len() as f64 / train_set.len() as f64;
            epoch_sum.apa += sum.apa * share;
            epoch_sum.mdd += sum.mdd * share;
            epoch_sum.total += sum.total * share;
        }

        let dev = if dev_set.is_empty() {
            None
        } else {
            let loss = dataset_loss(&model, &dev_set, features, weight, &cfg.loss)?;
            let report = evaluate(&model, &dev_corpus, features, seed)?.report;
            let pcc = |g, a: &str| report.aspect(g, a).map_or(f64::NAN, |m| m.pcc);
            Some(DevMetrics {
                total: loss.total,
                per: report.mdd.per,
                f1: report.mdd.f1,
                phone_accuracy_pcc: pcc(Granularity::Phone, "accuracy"),
                word_total_pcc: pcc(Granularity::Word, "total"),
                utterance_total_pcc: pcc(Granularity::Utterance, "total"),
            })
        };
        let select = dev.as_ref().map_or(epoch_sum.total, |d| d.total);
        log::info!(
            "seed {seed} epoch {epoch}/{}: train {:.5} dev {}",
            cfg.epochs,
            epoch_sum.total,
            dev.as_ref().map_or("-".to_string(), |d| format!("{:.5}", d.total))
        );
        history.push(HistoryRow::Epoch(EpochLog {
            epoch,
            step,
            lr: lr_main,
            apa_loss: epoch_sum.apa,
            mdd_loss: epoch_sum.mdd,
            total: epoch_sum.total,
            dev,
        }));
        if best.as_ref().is_none_or(|(b, _, _)| select < *b) {
            best = Some((select, epoch, model.clone()));
        }
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_history(&dir.join(HISTORY_FILE), &history)?;
        save(&model, FINAL_CHECKPOINT, step, cfg.epochs, &order_rng)?;
        save(&best_model, BEST_CHECKPOINT, step, best_epoch, &order_rng)?;
    }
    Ok(TrainOutcome {
        model,
        best: best_model,
        best_epoch,
        history,
    })
}
