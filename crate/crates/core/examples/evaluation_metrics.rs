//! Scoring and detection metrics on hand-made predictions.
//!
//! cargo run --example evaluation_metrics

use hmamba::metrics::{edit_distance, mdd_detection_metrics, mse, pcc, per};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let human = [1.0, 2.0, 2.0, 0.5, 1.5, 2.0];
    let model = [1.2, 1.8, 1.9, 0.9, 1.4, 1.7];
    println!("PCC {:.4}  MSE {:.4}", pcc(&model, &human), mse(&model, &human)?);

    let del = 99;
    let canonical = [3, 7, 1, 4, 4, 9];
    let realized = [3, 8, 1, del, 4, 9];
    let diagnosis = [3, 8, 2, 4, 4, 9];
    let mask = [true; 6];
    let d = mdd_detection_metrics(&diagnosis, &canonical, &realized, &mask)?;
    println!(
        "detection: tp {} fp {} fn {}  P {:.3} R {:.3} F1 {:.3}",
        d.tp, d.fp, d.fn_, d.precision, d.recall, d.f1
    );
    println!("edit distance {}", edit_distance(&diagnosis, &realized));
    println!("PER {:.4}", per(&diagnosis, &realized, &mask, del)?);
    Ok(())
}
