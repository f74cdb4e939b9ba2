//! Print the tri-phase learning rate for both parameter groups over a run.
//!
//! cargo run --example lr_schedule -- [total_steps]

use hmamba::trainer::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let total: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(100);
    let cfg = TrainConfig::default();
    println!("{:>6} {:>12} {:>12}", "step", "main", "utt_head");
    for step in (0..=total).step_by((total / 20).max(1)) {
        let main = cfg.schedule.lr_at(step as f64, total, cfg.lr_main)?;
        let head = cfg.schedule.lr_at(step as f64, total, cfg.lr_utt_head)?;
        println!("{step:>6} {main:>12.3e} {head:>12.3e}");
    }
    Ok(())
}
