//! The decoupled cross-entropy on a toy batch: its hit/miss split and how the
//! mispronunciation weight grows with the exponent.
//!
//! cargo run --example decoupled_loss

use hmamba::losses::{dexent_loss, dexent_parts, Frequencies};
use hmamba::numerics::{Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Five positions over four classes; positions 1 and 3 are mispronounced.
    let canonical = [0, 1, 2, 3, 0];
    let realized = [0, 2, 2, 1, 0];
    let mask = [true; 5];
    let logits = Tensor::from_rows(&[
        vec![2.0, 0.1, 0.0, -1.0],
        vec![0.0, 1.5, 0.4, 0.0],
        vec![0.3, 0.0, 1.2, 0.0],
        vec![0.0, 0.2, 0.0, 1.0],
        vec![1.0, 1.0, 0.0, 0.0],
    ])?;
    let freq = Frequencies { mu_m: 0.15, mu_h: 0.85 };

    let tape = Tape::new();
    let parts = dexent_parts(tape.constant(logits), &realized, &canonical, &mask)?;
    println!("L_hit {:.4}  L_mis {:.4}", parts.hit.item(), parts.mis.item());
    for alpha in [0.0, 0.3, 0.5, 0.7, 0.9] {
        let w = freq.weight(alpha);
        let loss = dexent_loss(&parts, w, mask.len() as f64)?;
        println!("alpha {alpha:.1}: weight {w:.3}  loss {:.4}", loss.item());
    }
    Ok(())
}
