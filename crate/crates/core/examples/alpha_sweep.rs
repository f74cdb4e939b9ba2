//! Train with several decoupling exponents and compare detection precision,
//! recall and PER.
//!
//! cargo run --release --example alpha_sweep

use hmamba::cli::{run_sweep, RunConfig};
use hmamba::corpus::{generate_synthetic, DataSet, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = generate_synthetic(&SynthConfig {
        n_train: 150,
        n_test: 50,
        phones_per_utt: 8,
        noise: 0.3,
        ..Default::default()
    })?;
    let data = DataSet::from_synthetic(&synth)?;
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("model.d", "16"),
        ("model.word_conv_kernels", "16"),
        ("train.epochs", "4"),
        ("train.batch_size", "16"),
        ("train.seeds", "1,2"),
    ] {
        cfg.set(k, v)?;
    }
    let table = run_sweep(&data, &cfg, &[0.0, 0.5, 0.9])?;
    print!("{}", table.to_csv());
    Ok(())
}
