//! Train briefly, then score one held-out utterance and print the
//! learner-facing breakdown: utterance, word and phone scores plus the
//! diagnosed phones.
//!
//! cargo run --release --example score_utterance

use hmamba::cli::{render_score, ScoreRequest};
use hmamba::corpus::{generate_synthetic, DataSet, SynthConfig};
use hmamba::model::HMambaConfig;
use hmamba::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = generate_synthetic(&SynthConfig {
        n_train: 200,
        n_test: 5,
        phones_per_utt: 8,
        noise: 0.2,
        ..Default::default()
    })?;
    let data = DataSet::from_synthetic(&synth)?;
    let cfg = HMambaConfig {
        d: 32,
        word_conv_kernels: 32,
        ..Default::default()
    }
    .with_data(&data);
    let model = hmamba::model::HMambaModel::new(cfg, 7)?;
    let tc = TrainConfig {
        epochs: 6,
        batch_size: 16,
        ..Default::default()
    };
    let outcome = train(&data.train, &data.features, model, &tc, 7, &serde_json::Value::Null, None)?;

    let rec = &data.test.records[0];
    let request = ScoreRequest::from_record(rec, data.test.inventory(), &data.features)?;
    let scored = request.score(&outcome.best)?;
    print!("{}", render_score(&scored));

    let inv = data.test.inventory();
    let truth: Vec<&str> = rec
        .realized
        .iter()
        .map(|r| r.map_or("-", |r| inv.class_symbol(r)))
        .collect();
    println!("\nannotated: {}", truth.join(" "));
    Ok(())
}
