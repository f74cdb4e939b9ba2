use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hmamba::cli::ScoredUtterance;
use hmamba::metrics::pcc;

const TINY: [&str; 12] = [
    "--set",
    "model.d=8",
    "--set",
    "model.ssm.d_state=4",
    "--set",
    "model.word_conv_kernels=8",
    "--set",
    "model.head_hidden=6",
    "--set",
    "train.epochs=1",
    "--set",
    "train.batch_size=8",
];

fn hmamba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmamba"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hmamba(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    hmamba(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("data_{n}_{seed}"));
    ok(&[
        "gen-synth",
        "--out",
        s(&out),
        "--n",
        &n.to_string(),
        "--n-test",
        "6",
        "--phones-per-utt",
        "4",
        "--seed",
        &seed.to_string(),
    ]);
    out
}

fn train(data: &Path, out: &Path, seeds: &str) {
    let mut args = vec!["train", "--data", s(data), "--out", s(out), "--seeds", seeds];
    args.extend(TINY);
    ok(&args);
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["train"]), 1);
}

#[test]
fn gen_synth_is_deterministic_and_guards_output() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["gen-synth", "--out", s(out), "--n", "100", "--error-rate", "0.15", "--seed", "7"]);
    }
    for f in ["corpus_train.jsonl", "corpus_test.jsonl", "features.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(code(&["gen-synth", "--out", s(&a), "--n", "10"]), 1);
    ok(&["gen-synth", "--out", s(&a), "--n", "10", "--force"]);
    assert_eq!(code(&["gen-synth", "--out", s(&dir.path().join("c")), "--error-rate", "1"]), 1);
}

#[test]
fn gen_synth_thousand_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    ok(&["gen-synth", "--out", s(&dir.path().join("d")), "--n", "1000"]);
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn train_eval_score_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 20, 1);
    let run = dir.path().join("run");
    let start = std::time::Instant::now();
    train(&data, &run, "1,2");
    assert!(start.elapsed().as_secs_f64() < 120.0);
    let again = dir.path().join("again");
    train(&data, &again, "1,2");
    assert_eq!(
        std::fs::read(run.join("report.json")).unwrap(),
        std::fs::read(again.join("report.json")).unwrap()
    );
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["run_config"]["model.d"], "8");

    let ckpt = run.join("seed_1").join("checkpoint_best.json");
    let ev1 = dir.path().join("ev1.json");
    let ev2 = dir.path().join("ev2.json");
    let preds = dir.path().join("pred.jsonl");
    ok(&["eval", "--model", s(&ckpt), "--data", s(&data), "--out", s(&ev1), "--predictions", s(&preds)]);
    ok(&["eval", "--model", s(&ckpt), "--data", s(&data), "--out", s(&ev2)]);
    assert_eq!(std::fs::read(&ev1).unwrap(), std::fs::read(&ev2).unwrap());

    // Phone PCC recomputed from the dumped predictions.
    let corpus = hmamba::corpus::load_corpus(data.join("corpus_test.jsonl")).unwrap();
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for (line, rec) in std::fs::read_to_string(&preds).unwrap().lines().zip(&corpus.records) {
        let p: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(p["utt_id"], rec.utt_id.as_str());
        for (t, s) in rec.phone_scores.iter().enumerate() {
            if let Some(s) = s {
                pred.push(p["phone"][t].as_f64().unwrap());
                truth.push(*s);
            }
        }
    }
    let ev: serde_json::Value = serde_json::from_slice(&std::fs::read(&ev1).unwrap()).unwrap();
    let reported = ev["aspects"][0]["pcc"].as_f64().unwrap();
    assert!((reported - pcc(&pred, &truth)).abs() < 1e-12);

    let csv = dir.path().join("ev.csv");
    ok(&["eval", "--model", s(&ckpt), "--data", s(&data), "--out", s(&csv)]);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("# format: "));

    // Scoring the generated sample request.
    let request = data.join("sample_request.json");
    let text = ok(&["score", "--model", s(&ckpt), "--utt", s(&request)]);
    assert!(text.starts_with("utterance "));
    assert!(text.contains('✓') || text.contains('✗'));
    let json = ok(&["score", "--model", s(&ckpt), "--utt", s(&request), "--json"]);
    let scored: ScoredUtterance = serde_json::from_str(&json).unwrap();
    assert_eq!(scored.utterance.len(), 5);
    assert!(scored.words.iter().all(|w| w.scores.len() == 3));
    for p in &scored.phones {
        assert_eq!(p.canonical == "SIL", p.diagnosis.is_none());
        assert_eq!(p.canonical == "SIL", p.accuracy.is_none());
        assert_eq!(
            p.mispronounced,
            p.diagnosis.as_ref().is_some_and(|d| *d != p.canonical)
        );
    }
    let sil_rows = text.lines().filter(|l| l.contains(" SIL ")).count();
    assert_eq!(sil_rows, scored.phones.iter().filter(|p| p.canonical == "SIL").count());

    // A feature row too short is an input error.
    let mut req: serde_json::Value = serde_json::from_slice(&std::fs::read(&request).unwrap()).unwrap();
    req["features"]["rows"][0].as_array_mut().unwrap().pop();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, req.to_string()).unwrap();
    assert_eq!(code(&["score", "--model", s(&ckpt), "--utt", s(&bad)]), 1);
    req["features"]["rows"].as_array_mut().unwrap().pop();
    std::fs::write(&bad, req.to_string()).unwrap();
    assert_eq!(code(&["score", "--model", s(&ckpt), "--utt", s(&bad)]), 1);
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 12, 2);
    let run = dir.path().join("run");
    train(&data, &run, "1");
    let ckpt = run.join("seed_1").join("checkpoint_final.json");
    let mut value: serde_json::Value = serde_json::from_slice(&std::fs::read(&ckpt).unwrap()).unwrap();
    value["config"]["manifest"][0]["dim"] = serde_json::json!(9);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, value.to_string()).unwrap();
    let out = dir.path().join("ev.json");
    assert_eq!(code(&["eval", "--model", s(&bad), "--data", s(&data), "--out", s(&out)]), 1);
    assert!(!out.exists());
}

#[test]
fn config_errors_stop_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 12, 3);
    let out = dir.path().join("run");
    for bad in ["model.nope=1", "model.d=0", "train.warmup_frac=0.9", "loss.beta=-1"] {
        let c = code(&["train", "--data", s(&data), "--out", s(&out), "--set", bad]);
        assert_eq!(c, 1, "{bad}");
        assert!(!out.exists(), "{bad}");
    }
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# tiny\n[model]\nd = 8\nheads = 3\n").unwrap();
    assert_eq!(code(&["bench", "--config", s(&cfg), "--set", "model.block=transformer"]), 1);
}

#[test]
fn bench_json_schema() {
    let text = ok(&["bench", "--set", "model.d=16", "--seq-len", "20", "--reps", "1"]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["format"], "hmamba-bench");
    assert_eq!(v["version"], 1);
    assert_eq!(v["d"], 16);
    assert_eq!(v["seq_len"], 20);
    assert_eq!(v["run_config"]["model.d"], "16");
    let blocks = v["blocks"].as_array().unwrap();
    assert_eq!(blocks.len(), 2);
    assert_eq!(blocks[0]["block_type"], "mamba");
    assert_eq!(blocks[1]["block_type"], "transformer");
    for b in blocks {
        assert!(b["params"].as_u64().unwrap() > 0);
        assert!(b["macs"].as_u64().unwrap() > 0);
    }
    assert_eq!(v["timing"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_alpha_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 16, 4);
    let csv = dir.path().join("sweep.csv");
    let mut args = vec!["sweep-alpha", "--data", s(&data), "--alphas", "0,0.9", "--seeds", "1", "--out", s(&csv)];
    args.extend(TINY);
    ok(&args);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines[0], "alpha,precision,recall,f1,per");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("0.9,"));

    let json = dir.path().join("sweep.json");
    let mut args = vec!["sweep-alpha", "--data", s(&data), "--alphas", "0.5", "--seeds", "1", "--out", s(&json)];
    args.extend(TINY);
    ok(&args);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(v["format"], "hmamba-sweep");
    assert_eq!(v["rows"][0]["alpha"], 0.5);
    assert_eq!(code(&["sweep-alpha", "--data", s(&data), "--alphas", "x", "--out", s(&json)]), 1);
}
