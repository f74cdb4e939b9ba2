//! Generate a synthetic corpus, print its statistics and the ceiling of a
//! decoder that knows the generator, then write it to disk.
//!
//! cargo run --release --example generate_corpus -- /tmp/synth [noise]

use hmamba::corpus::{bayes_ceiling, generate_synthetic, write_synthetic, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synth_corpus".into());
    let mut cfg = SynthConfig::default();
    if let Some(noise) = args.next() {
        cfg.noise = noise.parse()?;
    }
    let data = generate_synthetic(&cfg)?;

    let table = data.feature_table()?;
    let inv = data.train.inventory();
    let (mut phones, mut errors) = (0usize, 0usize);
    for rec in &data.train.records {
        for (c, r) in rec.canonical.iter().zip(&rec.realized) {
            if let Some(r) = r {
                phones += 1;
                errors += usize::from(r != c);
            }
        }
    }
    println!("{} train / {} test utterances", data.train.records.len(), data.test.records.len());
    println!("{phones} scored train phones, error rate {:.3}", errors as f64 / phones as f64);
    println!("{} classifier classes, features:", inv.num_classes());
    for p in &table.manifest {
        println!("  {:<18} dim {:>3}{}", p.name, p.dim, if p.is_ssl { "  (ssl)" } else { "" });
    }

    let ceiling = bayes_ceiling(&data.test, &table, &cfg)?;
    println!(
        "ceiling on test: MDD F1 {:.3} (P {:.3}, R {:.3}), phone PCC {:.3}",
        ceiling.detection.f1, ceiling.detection.precision, ceiling.detection.recall, ceiling.phone_pcc
    );

    write_synthetic(&data, &out)?;
    println!("written to {out}");
    Ok(())
}
