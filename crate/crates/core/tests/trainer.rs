mod common;

use std::collections::HashSet;

use hmamba::corpus::{generate_synthetic, DataSet, ScoreScaler, SynthConfig};
use hmamba::losses::LossConfig;
use hmamba::model::{Checkpoint, HMambaModel};
use hmamba::numerics::{Tape, Tensor};
use hmamba::params::{ParamGroup, ParamStore};
use hmamba::rng::substream;
use hmamba::trainer::{
    run_protocol, split_dev, train, utterance_loss, Adam, AdamConfig, BatchCounts, Example, ProtocolOptions,
    TrainConfig, FINAL_CHECKPOINT, HISTORY_FILE,
};

fn quick_cfg(epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        ..Default::default()
    }
}

#[test]
fn adam_first_steps_match_hand_values() {
    let mut store = ParamStore::new();
    let id = store.add("w", ParamGroup::Main, Tensor::vector(vec![1.0, -1.0]));
    let head = store.add("h", ParamGroup::UtteranceHead, Tensor::vector(vec![0.0]));
    let mut adam = Adam::new(&store, AdamConfig::default());
    let grads = vec![vec![0.5, -2.0], vec![4.0]];
    let lr = |g: ParamGroup| if g == ParamGroup::Main { 0.1 } else { 0.01 };
    adam.step(&mut store, &grads, lr).unwrap();
    // Bias correction makes the first step lr * g / (|g| + eps).
    let w = store.get(id).to_vec();
    assert!((w[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
    assert!((w[1] - (-1.0 + 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
    assert!((store.get(head).item() + 0.01 * 4.0 / (4.0 + 1e-8)).abs() < 1e-15);
    // A constant gradient keeps the bias-corrected ratio at one.
    adam.step(&mut store, &grads, lr).unwrap();
    assert!((store.get(id).to_vec()[0] - (1.0 - 2.0 * 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-12);
    assert_eq!(adam.step, 2);
}

#[test]
fn adam_rejects_non_finite_gradients_untouched() {
    let mut store = ParamStore::new();
    let id = store.add("w", ParamGroup::Main, Tensor::vector(vec![1.0]));
    let mut adam = Adam::new(&store, AdamConfig::default());
    assert!(adam.step(&mut store, &[vec![f64::NAN]], |_| 0.1).is_err());
    assert_eq!(store.get(id).item(), 1.0);
    assert_eq!(adam.step, 0);
}

#[test]
fn dev_split_is_deterministic_and_near_fraction() {
    let data = common::tiny_data(400, 0, 1);
    let (train_a, dev_a) = split_dev(&data.train.records, 3, 0.1);
    let (train_b, dev_b) = split_dev(&data.train.records, 3, 0.1);
    assert_eq!((&train_a, &dev_a), (&train_b, &dev_b));
    assert_eq!(train_a.len() + dev_a.len(), 400);
    assert!((20..=60).contains(&dev_a.len()), "dev size {}", dev_a.len());
    let (_, dev_c) = split_dev(&data.train.records, 4, 0.1);
    assert_ne!(dev_a, dev_c);
}

#[test]
fn param_groups_partition_and_every_group_gets_gradient() {
    let data = common::tiny_data(40, 0, 2);
    let model = HMambaModel::new(common::tiny_config(&data), 1).unwrap();
    let groups = model.param_groups();
    let all: HashSet<_> = model.store.iter().map(|(id, _)| id).collect();
    let main: HashSet<_> = groups[0].1.iter().copied().collect();
    let utt: HashSet<_> = groups[1].1.iter().copied().collect();
    assert!(main.is_disjoint(&utt));
    assert_eq!(main.union(&utt).count(), all.len());
    assert!(!utt.is_empty());

    // A record with both correct and mispronounced phones.
    let record = data
        .train
        .records
        .iter()
        .find(|r| {
            let e = r.error_states();
            e.contains(&true) && r.realized.iter().zip(&r.canonical).any(|(x, c)| *x == Some(*c))
        })
        .unwrap();
    let scaler = ScoreScaler::new(model.config.score_ranges.clone()).unwrap();
    let ex = Example::new(record, &scaler, &model).unwrap();
    let bundle = model
        .assemble(record, data.features.get(&record.utt_id).unwrap(), false, &mut substream(0, "eval"))
        .unwrap();
    let tape = Tape::new();
    let p = model.store.bind(&tape);
    let (loss, _) =
        utterance_loss(&model, &p, &ex, &bundle, BatchCounts::of([&ex]), 2.0, &LossConfig::default()).unwrap();
    tape.backward(loss).unwrap();
    let grads = p.grads();
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for (group, members) in [(ParamGroup::Main, &main), (ParamGroup::UtteranceHead, &utt)] {
        let norm: f64 = ids
            .iter()
            .zip(&grads)
            .filter(|(id, _)| members.contains(id))
            .map(|(_, g)| g.data().iter().map(|x| x * x).sum::<f64>())
            .sum();
        assert!(norm > 0.0, "{group:?} receives no gradient");
    }
}

#[test]
fn single_utterance_overfits() {
    let mut data = common::tiny_data(20, 0, 4);
    data.train.records.truncate(1);
    let model = HMambaModel::new(common::tiny_config(&data), 3).unwrap();
    let cfg = TrainConfig {
        dev_fraction: 0.0,
        ..quick_cfg(50, 1)
    };
    let out = train(&data.train, &data.features, model, &cfg, 3, &serde_json::Value::Null, None).unwrap();
    let totals: Vec<f64> = out.steps().map(|s| s.total).collect();
    assert_eq!(totals.len(), 50);
    let tail = &totals[10..];
    let decreasing = tail.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(decreasing * 10 >= (tail.len() - 1) * 9, "{decreasing} of {} steps decrease", tail.len() - 1);
}

#[test]
fn same_seed_gives_identical_history_and_parameters() {
    let data = common::tiny_data(30, 0, 5);
    let cfg = quick_cfg(2, 8);
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let model = HMambaModel::new(common::tiny_config(&data), 9).unwrap();
        let o = train(&data.train, &data.features, model, &cfg, 9, &serde_json::Value::Null, Some(&out)).unwrap();
        (o, std::fs::read(out.join(HISTORY_FILE)).unwrap())
    };
    let (a, hist_a) = run("a");
    let (b, hist_b) = run("b");
    assert_eq!(hist_a, hist_b);
    for ((_, pa), (_, pb)) in a.model.store.iter().zip(b.model.store.iter()) {
        assert_eq!(pa.value, pb.value, "{}", pa.name);
    }
    let ck = Checkpoint::load(dir.path().join("a").join(FINAL_CHECKPOINT)).unwrap();
    let restored = HMambaModel::from_checkpoint(&ck).unwrap();
    for ((_, pa), (_, pr)) in a.model.store.iter().zip(restored.store.iter()) {
        assert_eq!(pa.value, pr.value);
    }
}

#[test]
fn error_free_corpus_trains_without_decoupling() {
    let synth = generate_synthetic(&SynthConfig {
        n_train: 20,
        n_test: 4,
        phones_per_utt: 4,
        error_rate: 0.0,
        ..Default::default()
    })
    .unwrap();
    let data = DataSet::from_synthetic(&synth).unwrap();
    let model = HMambaModel::new(common::tiny_config(&data), 1).unwrap();
    let out = train(&data.train, &data.features, model, &quick_cfg(1, 8), 1, &serde_json::Value::Null, None).unwrap();
    assert!(out.steps().all(|s| s.total.is_finite() && s.weight == 1.0));
}

#[test]
fn protocol_output_manifest() {
    let data = common::tiny_data(24, 6, 6);
    let dir = tempfile::tempdir().unwrap();
    let seeds = [1, 2, 3];
    let out = run_protocol(
        &data,
        &common::tiny_config(&data),
        &quick_cfg(1, 8),
        &seeds,
        &serde_json::json!({ "k": "v" }),
        Some(dir.path()),
        ProtocolOptions::default(),
    )
    .unwrap();
    assert_eq!(out.reports.len(), 3);
    let mut files = Vec::new();
    for entry in walk(dir.path()) {
        files.push(entry.strip_prefix(dir.path()).unwrap().to_string_lossy().into_owned());
    }
    files.sort();
    let mut expected = vec!["report.json".to_string()];
    for s in seeds {
        for f in ["checkpoint_best.json", "checkpoint_final.json", "history.jsonl"] {
            expected.push(format!("seed_{s}/{f}"));
        }
    }
    expected.sort();
    assert_eq!(files, expected);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["run_config"]["k"], "v");
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
