//! Run the selective scan on random inputs, check it against a plain loop
//! over the recurrence and show gradients flowing back to the step sizes.
//!
//! cargo run --example selective_scan

use hmamba::numerics::{Tape, Tensor};
use hmamba::ssm::selective_scan;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (t_len, ch, n) = (6, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = random(&mut rng, &[t_len, ch], -1.0, 1.0);
    let delta = random(&mut rng, &[t_len, ch], 0.05, 0.5);
    let a = random(&mut rng, &[ch, n], -2.0, -0.1);
    let b = random(&mut rng, &[t_len, n], -1.0, 1.0);
    let c = random(&mut rng, &[t_len, n], -1.0, 1.0);
    let d = random(&mut rng, &[ch], -1.0, 1.0);

    let tape = Tape::new();
    let dv = tape.var(delta.clone());
    let y = selective_scan(
        tape.constant(u.clone()),
        dv,
        tape.constant(a.clone()),
        tape.constant(b.clone()),
        tape.constant(c.clone()),
        tape.constant(d.clone()),
    )?;

    let mut worst: f64 = 0.0;
    for k in 0..ch {
        let mut h = vec![0.0; n];
        for t in 0..t_len {
            let dt = delta.at2(t, k);
            let mut out = d.data()[k] * u.at2(t, k);
            for s in 0..n {
                h[s] = (dt * a.at2(k, s)).exp() * h[s] + dt * b.at2(t, s) * u.at2(t, k);
                out += c.at2(t, s) * h[s];
            }
            worst = worst.max((out - y.value().at2(t, k)).abs());
        }
    }
    println!("scan output [{t_len}x{ch}], max deviation from the loop: {worst:.2e}");

    y.sum().backward()?;
    let g = dv.grad().expect("step sizes take part in the graph");
    println!("d(sum y)/d(delta), first row: {:?}", g.row(0));
    Ok(())
}
