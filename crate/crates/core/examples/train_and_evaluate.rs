//! Train a small model on an in-memory synthetic corpus with the multi-seed
//! protocol and print the seed-averaged test report.
//!
//! cargo run --release --example train_and_evaluate -- [out_dir]

use hmamba::corpus::{generate_synthetic, DataSet, SynthConfig};
use hmamba::model::HMambaConfig;
use hmamba::trainer::{run_protocol, ProtocolOptions, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1);

    let synth = generate_synthetic(&SynthConfig {
        n_train: 200,
        n_test: 50,
        phones_per_utt: 8,
        noise: 0.2,
        ..Default::default()
    })?;
    let data = DataSet::from_synthetic(&synth)?;

    let model = HMambaConfig {
        d: 32,
        word_conv_kernels: 32,
        ..Default::default()
    }
    .with_data(&data);
    let train = TrainConfig {
        epochs: 5,
        batch_size: 16,
        ..Default::default()
    };
    let seeds = [1, 2];
    let outcome = run_protocol(
        &data,
        &model,
        &train,
        &seeds,
        &serde_json::json!({ "example": "train_and_evaluate" }),
        out.as_deref().map(std::path::Path::new),
        ProtocolOptions { curves_csv: true, report_csv: true },
    )?;

    for (seed, run) in &outcome.runs {
        println!("seed {seed}: best epoch {} of {}", run.best_epoch, run.epochs().count());
    }
    let r = &outcome.aggregate;
    for a in &r.aspects {
        println!("{:<10} {:<13} PCC {:.3}", a.granularity.name(), a.aspect, a.pcc);
    }
    println!("MDD F1 {:.3}, PER {:.3}", r.mdd.f1, r.mdd.per);
    Ok(())
}
