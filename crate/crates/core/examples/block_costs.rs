//! Parameters, multiply-accumulates and forward time of one Mamba block
//! against one Transformer block of the same width.
//!
//! cargo run --release --example block_costs -- [d] [seq_len]

use hmamba::cli::{run_bench, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    if let Some(d) = args.next() {
        cfg.set("model.d", &d)?;
    }
    let seq_len = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let report = run_bench(&cfg, seq_len, 10)?;
    println!("d = {}, sequence length {}", report.d, report.seq_len);
    for (b, t) in report.blocks.iter().zip(&report.timing) {
        println!(
            "{:<12} params {:>8}  MACs {:>10}  forward {:.2} ms",
            b.block_type.to_string(),
            b.params,
            b.macs,
            t.forward_ms
        );
    }
    println!("mamba / transformer: params {:.3}, MACs {:.3}", report.params_ratio, report.macs_ratio);
    Ok(())
}
