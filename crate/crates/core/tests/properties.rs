use hmamba::corpus::{Granularity, PhoneInventory, ScoreRanges, ScoreScaler, UtteranceRecord, Word};
use hmamba::features::{relative_tokens, RelToken, LONG_SILENCE_SECS};
use hmamba::metrics::{edit_distance, mdd_detection_metrics, pcc};
use hmamba::numerics::{Tape, Tensor};
use hmamba::trainer::lr_at;
use proptest::prelude::*;

fn naive_edit(a: &[u8], b: &[u8]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let sub = naive_edit(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
    sub.min(naive_edit(&a[1..], b) + 1).min(naive_edit(a, &b[1..]) + 1)
}

fn paired(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

proptest! {
    #[test]
    fn pcc_is_affine_invariant((x, y) in paired(3..30), a in 0.1f64..5.0, b in -5.0f64..5.0) {
        let r = pcc(&x, &y);
        prop_assume!(r.is_finite());
        let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((pcc(&x2, &y) - r).abs() < 1e-9);
        let neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
        prop_assert!((pcc(&neg, &y) + r).abs() < 1e-9);
        prop_assert!(r.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn detection_ignores_label_names(
        rows in prop::collection::vec((0usize..6, 0usize..6, 0usize..6, any::<bool>()), 1..40),
        shift in 1usize..50,
    ) {
        let dx: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let can: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let real: Vec<usize> = rows.iter().map(|r| r.2).collect();
        let mask: Vec<bool> = rows.iter().map(|r| r.3).collect();
        let m = mdd_detection_metrics(&dx, &can, &real, &mask).unwrap();
        let rename = |v: &[usize]| -> Vec<usize> { v.iter().map(|x| (x * 7 + shift) % 1000).collect() };
        let m2 = mdd_detection_metrics(&rename(&dx), &rename(&can), &rename(&real), &mask).unwrap();
        prop_assert_eq!(&m, &m2);
        for v in [m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
        prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12);
    }

    #[test]
    fn scaler_round_trips(x in -20.0f64..20.0, aspect in 0usize..5) {
        let s = ScoreScaler::new(ScoreRanges::default()).unwrap();
        for (g, k) in [(Granularity::Phone, 0), (Granularity::Word, aspect % 3), (Granularity::Utterance, aspect)] {
            let y = s.normalize(g, k, x).unwrap();
            prop_assert!((s.denormalize(g, k, y).unwrap() - x).abs() < 1e-12);
        }
    }

    #[test]
    fn edit_distance_matches_recursion(
        a in prop::collection::vec(0u8..4, 0..8),
        b in prop::collection::vec(0u8..4, 0..8),
    ) {
        let d = edit_distance(&a, &b);
        prop_assert_eq!(d, naive_edit(&a, &b));
        prop_assert_eq!(d, edit_distance(&b, &a));
        prop_assert!(d <= a.len().max(b.len()));
    }

    #[test]
    fn flip_is_an_involution_and_softmax_normalizes(
        t in 1usize..8,
        c in 1usize..5,
        seed in prop::collection::vec(-30.0f64..30.0, 40),
    ) {
        let x = Tensor::new(vec![t, c], seed[..t * c].to_vec()).unwrap();
        let tape = Tape::new();
        let v = tape.constant(x.clone());
        let back = v.flip_sequence().unwrap().flip_sequence().unwrap().value();
        prop_assert_eq!(back.data(), x.data());
        let flipped = v.flip_sequence().unwrap().value();
        prop_assert_eq!(flipped.row(0), x.row(t - 1));
        let sm = v.softmax().unwrap().value();
        for r in 0..t {
            prop_assert!((sm.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(sm.row(r).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn learning_rate_stays_in_range(total in 1usize..500, frac in 0.0f64..=1.0, peak in 1e-5f64..1.0) {
        let step = ((total as f64) * frac).floor() as usize;
        let lr = lr_at(step, total, peak).unwrap();
        prop_assert!(lr >= 0.0 && lr <= peak * (1.0 + 1e-12));
        prop_assert!(lr_at(total + 1, total, peak).is_err());
    }

    #[test]
    fn relative_tokens_follow_word_shape(
        words in prop::collection::vec((1usize..6, prop::option::of(0.0f64..1.0)), 1..8),
    ) {
        let inv = PhoneInventory::default();
        let phone = inv.canonical_id("AA").unwrap();
        let mut rec = UtteranceRecord {
            utt_id: "p".into(),
            canonical: Vec::new(),
            sil_durations: Vec::new(),
            words: Vec::new(),
            realized: Vec::new(),
            phone_scores: Vec::new(),
            utterance_scores: [0.0; 5],
            latent: None,
        };
        for (k, &(len, sil)) in words.iter().enumerate() {
            if let Some(dur) = sil {
                rec.canonical.push(inv.sil_id());
                rec.sil_durations.push(Some(dur));
            }
            let start = rec.canonical.len();
            for _ in 0..len {
                rec.canonical.push(phone);
                rec.sil_durations.push(None);
            }
            rec.words.push(Word { text: format!("w{k}"), start, end: start + len, scores: [0.0; 3] });
        }
        let toks = relative_tokens(&rec, &inv, LONG_SILENCE_SECS).unwrap();
        prop_assert_eq!(toks.len(), rec.len());
        for (t, tok) in toks.iter().enumerate() {
            if let Some(dur) = rec.sil_durations[t] {
                let want = if dur > LONG_SILENCE_SECS { RelToken::LS } else { RelToken::SS };
                prop_assert_eq!(*tok, want);
            }
        }
        for w in &rec.words {
            let got = &toks[w.positions()];
            if w.len() == 1 {
                prop_assert_eq!(got, &[RelToken::S][..]);
            } else {
                prop_assert_eq!(got[0], RelToken::B);
                prop_assert_eq!(got[w.len() - 1], RelToken::E);
                prop_assert!(got[1..w.len() - 1].iter().all(|&x| x == RelToken::I));
            }
        }
    }
}
