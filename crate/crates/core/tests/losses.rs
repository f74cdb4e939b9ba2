use hmamba::corpus::{Granularity, ScoreRanges};
use hmamba::losses::{apa_loss, dexent_loss, dexent_parts, total_loss, Level};
use hmamba::metrics::{aggregate_seeds, mse, EvalAccumulator};
use hmamba::numerics::{Tape, Tensor};

fn level<'t>(tape: &'t Tape, pred: &[f64], target: &[f64], m: usize, mask: Vec<bool>) -> Level<'t> {
    let rows = pred.len() / m;
    Level {
        pred: tape.constant(Tensor::new(vec![rows, m], pred.to_vec()).unwrap()),
        target: Tensor::new(vec![rows, m], target.to_vec()).unwrap(),
        mask,
    }
}

#[test]
fn apa_averages_levels_with_weights() {
    let tape = Tape::new();
    let phone = level(&tape, &[1.0, 0.0, 3.0], &[0.0, 0.0, 0.0], 1, vec![true, true, false]);
    let word = level(&tape, &[1.0, 1.0, 0.0, 0.0], &[0.0; 4], 2, vec![true, true]);
    let got = apa_loss(&[phone, word], &[2.0, 1.0], None).unwrap().item();
    // phone: (1 + 0) / 2 rows; word: 2 / (2 rows · 2 aspects)
    assert!((got - (2.0 * 0.5 + 0.5)).abs() < 1e-15);
}

#[test]
fn apa_is_permutation_invariant() {
    let pred = [0.1, 0.9, 0.4, 0.3, 0.7];
    let target = [0.0, 1.0, 0.5, 0.5, 0.2];
    let order = [3, 0, 4, 1, 2];
    let tape = Tape::new();
    let a = apa_loss(&[level(&tape, &pred, &target, 1, vec![true; 5])], &[1.0], None).unwrap();
    let p2: Vec<f64> = order.iter().map(|&i| pred[i]).collect();
    let t2: Vec<f64> = order.iter().map(|&i| target[i]).collect();
    let b = apa_loss(&[level(&tape, &p2, &t2, 1, vec![true; 5])], &[1.0], None).unwrap();
    assert!((a.item() - b.item()).abs() < 1e-15);
    assert!((a.item() - mse(&pred, &target).unwrap()).abs() < 1e-15);
}

#[test]
fn dexent_splits_hits_and_misses() {
    let tape = Tape::new();
    let logits = tape.constant(Tensor::new(vec![3, 2], vec![0.0, 0.0, 2.0, 0.0, 0.0, 1.0]).unwrap());
    // position 0 is a hit, 1 a miss, 2 masked out
    let parts = dexent_parts(logits, &[0, 1, 1], &[0, 0, 1], &[true, true, false]).unwrap();
    let ln2 = 2f64.ln();
    let miss = (1.0 + 2f64.exp()).ln();
    assert!((parts.hit.item() - ln2).abs() < 1e-12);
    assert!((parts.mis.item() - miss).abs() < 1e-12);
    let l = dexent_loss(&parts, 3.0, 2.0).unwrap().item();
    assert!((l - (ln2 + 3.0 * miss) / 2.0).abs() < 1e-12);
}

#[test]
fn total_is_linear_in_beta() {
    let tape = Tape::new();
    let apa = tape.constant(Tensor::scalar(0.4));
    let mdd = tape.constant(Tensor::scalar(2.5));
    let at = |b: f64| total_loss(apa, mdd, b).unwrap().item();
    assert_eq!(at(0.0), 0.4);
    assert!((at(0.003) - (0.4 + 0.0075)).abs() < 1e-15);
    assert!((at(2.0) - at(1.0) - (at(1.0) - at(0.0))).abs() < 1e-12);
}

#[test]
fn seed_reports_average() {
    let ranges = ScoreRanges::default();
    let report = |pred: [f64; 3]| {
        let mut acc = EvalAccumulator::new(&ranges, 46);
        for (p, t) in pred.iter().zip([0.0, 1.0, 2.0]) {
            acc.push_score(Granularity::Phone, 0, *p, t);
        }
        acc.push_mdd(&[1, 2], &[1, 2], &[1, 3], &[true, true]);
        acc.finish(0).unwrap()
    };
    let a = report([0.0, 1.0, 2.0]);
    let b = report([2.0, 1.0, 0.0]);
    let mean = aggregate_seeds(&[a.clone(), b]).unwrap();
    let phone = mean.aspect(Granularity::Phone, &a.aspects[0].aspect).unwrap();
    assert!(phone.pcc.abs() < 1e-15);
    assert!((phone.mse - 4.0 / 3.0).abs() < 1e-12);
    assert_eq!(mean.aggregation, "mean");
    assert_eq!(mean.mdd.per, 0.5);
    assert_eq!(mean.mdd.recall, 0.0);
}
