//! Assessment and detection metrics, the evaluation report and seed averaging.

use serde::{Deserialize, Serialize};

use crate::corpus::{Granularity, ScoreRanges};
use crate::error::{Error, Result};

pub const REPORT_FORMAT: &str = "hmamba-eval";
pub const REPORT_VERSION: u32 = 1;

/// Sample Pearson correlation. Returns NaN (with a warning) when fewer than two
/// items are given or either vector is constant.
pub fn pcc(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len();
    if n != target.len() || n < 2 {
        log::warn!("pcc undefined for {n} prediction(s) against {} target(s)", target.len());
        return f64::NAN;
    }
    let mp = pred.iter().sum::<f64>() / n as f64;
    let mt = target.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 || syy == 0.0 {
        log::warn!("pcc undefined for a constant vector");
        return f64::NAN;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape("mse", &[pred.len()], &[target.len()]));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Set when a zero denominator forced a metric to 0.
    pub degenerate: bool,
}

impl DetectionMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let mut degenerate = false;
        let mut ratio = |num: usize, den: usize| {
            if den == 0 {
                degenerate = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            degenerate = true;
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            degenerate,
        }
    }
}

/// Positional detection counts: a truth error is `realized != canonical`, a
/// predicted error is `diagnosis != canonical`.
pub fn mdd_detection_metrics(
    diagnosis: &[usize],
    canonical: &[usize],
    realized: &[usize],
    mask: &[bool],
) -> Result<DetectionMetrics> {
    let n = canonical.len();
    if diagnosis.len() != n || realized.len() != n || mask.len() != n {
        return Err(Error::invalid(
            "mdd_detection_metrics",
            format!(
                "lengths differ: diagnosis {}, canonical {n}, realized {}, mask {}",
                diagnosis.len(),
                realized.len(),
                mask.len()
            ),
        ));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for t in (0..n).filter(|&t| mask[t]) {
        let truth = realized[t] != canonical[t];
        let flagged = diagnosis[t] != canonical[t];
        match (truth, flagged) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(DetectionMetrics::from_counts(tp, fp, fn_))
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Masked positions and `del` tokens dropped from each side independently.
pub fn strip_for_per(seq: &[usize], mask: &[bool], del: usize) -> Vec<usize> {
    seq.iter()
        .zip(mask)
        .filter(|&(&p, &m)| m && p != del)
        .map(|(&p, _)| p)
        .collect()
}

/// Phone error rate of `diagnosis` against `realized`. NaN (with a warning)
/// when the reference is empty after removal.
pub fn per(diagnosis: &[usize], realized: &[usize], mask: &[bool], del: usize) -> Result<f64> {
    if diagnosis.len() != realized.len() || mask.len() != realized.len() {
        return Err(Error::shape("per", &[diagnosis.len()], &[realized.len()]));
    }
    let hyp = strip_for_per(diagnosis, mask, del);
    let reference = strip_for_per(realized, mask, del);
    if reference.is_empty() {
        log::warn!("per undefined for an empty reference");
        return Ok(f64::NAN);
    }
    Ok(edit_distance(&hyp, &reference) as f64 / reference.len() as f64)
}

pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectMetrics {
    pub granularity: Granularity,
    pub aspect: String,
    #[serde(with = "nan_as_null")]
    pub pcc: f64,
    #[serde(with = "nan_as_null")]
    pub mse: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MddMetrics {
    #[serde(with = "nan_as_null")]
    pub precision: f64,
    #[serde(with = "nan_as_null")]
    pub recall: f64,
    #[serde(with = "nan_as_null")]
    pub f1: f64,
    #[serde(with = "nan_as_null")]
    pub per: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub aspects: Vec<AspectMetrics>,
    pub mdd: MddMetrics,
    pub seeds: Vec<u64>,
    /// `single` for one run, `mean` after seed averaging.
    pub aggregation: String,
    /// Effective run configuration, when the report came from a CLI run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

impl EvalReport {
    pub fn aspect(&self, g: Granularity, name: &str) -> Option<&AspectMetrics> {
        self.aspects.iter().find(|a| a.granularity == g && a.aspect == name)
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["seeds".to_string(), "aggregation".to_string()];
        for a in &self.aspects {
            let g = a.granularity.name();
            cols.push(format!("{g}.{}.pcc", a.aspect));
            cols.push(format!("{g}.{}.mse", a.aspect));
        }
        cols.extend(["mdd.precision", "mdd.recall", "mdd.f1", "mdd.per"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let f = |x: f64| if x.is_finite() { format!("{x}") } else { String::new() };
        let seeds = self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
        let mut cols = vec![seeds, self.aggregation.clone()];
        for a in &self.aspects {
            cols.push(f(a.pcc));
            cols.push(f(a.mse));
        }
        for x in [self.mdd.precision, self.mdd.recall, self.mdd.f1, self.mdd.per] {
            cols.push(f(x));
        }
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", self.csv_header(), self.csv_row())
    }
}

/// Collects pooled predictions for one evaluation pass.
#[derive(Clone, Debug)]
pub struct EvalAccumulator {
    ranges: ScoreRanges,
    /// `(granularity, aspect) → (pred, target)`, in report order.
    pairs: Vec<(Granularity, String, Vec<f64>, Vec<f64>)>,
    diagnosis: Vec<usize>,
    canonical: Vec<usize>,
    realized: Vec<usize>,
    mask: Vec<bool>,
    edits: usize,
    ref_len: usize,
    del: usize,
}

impl EvalAccumulator {
    pub fn new(ranges: &ScoreRanges, del: usize) -> Self {
        let pairs = Granularity::ALL
            .iter()
            .flat_map(|&g| ranges.get(g).iter().map(move |a| (g, a.name.clone(), Vec::new(), Vec::new())))
            .collect();
        Self {
            ranges: ranges.clone(),
            pairs,
            diagnosis: Vec::new(),
            canonical: Vec::new(),
            realized: Vec::new(),
            mask: Vec::new(),
            edits: 0,
            ref_len: 0,
            del,
        }
    }

    fn index(&self, g: Granularity, aspect: usize) -> usize {
        Granularity::ALL
            .iter()
            .take_while(|&&x| x != g)
            .map(|&x| self.ranges.get(x).len())
            .sum::<usize>()
            + aspect
    }

    pub fn push_score(&mut self, g: Granularity, aspect: usize, pred: f64, target: f64) {
        let i = self.index(g, aspect);
        self.pairs[i].2.push(pred);
        self.pairs[i].3.push(target);
    }

    pub fn push_mdd(&mut self, diagnosis: &[usize], canonical: &[usize], realized: &[usize], mask: &[bool]) {
        let hyp = strip_for_per(diagnosis, mask, self.del);
        let reference = strip_for_per(realized, mask, self.del);
        self.edits += edit_distance(&hyp, &reference);
        self.ref_len += reference.len();
        self.diagnosis.extend_from_slice(diagnosis);
        self.canonical.extend_from_slice(canonical);
        self.realized.extend_from_slice(realized);
        self.mask.extend_from_slice(mask);
    }

    pub fn finish(&self, seed: u64) -> Result<EvalReport> {
        let aspects = self
            .pairs
            .iter()
            .map(|(g, name, p, t)| AspectMetrics {
                granularity: *g,
                aspect: name.clone(),
                pcc: pcc(p, t),
                mse: if p.is_empty() { f64::NAN } else { mse(p, t).unwrap_or(f64::NAN) },
                count: p.len(),
            })
            .collect();
        let det = mdd_detection_metrics(&self.diagnosis, &self.canonical, &self.realized, &self.mask)?;
        let per = if self.ref_len == 0 {
            f64::NAN
        } else {
            self.edits as f64 / self.ref_len as f64
        };
        Ok(EvalReport {
            format: REPORT_FORMAT.to_string(),
            version: REPORT_VERSION,
            aspects,
            mdd: MddMetrics {
                precision: det.precision,
                recall: det.recall,
                f1: det.f1,
                per,
            },
            seeds: vec![seed],
            aggregation: "single".to_string(),
            run_config: None,
        })
    }
}

/// Arithmetic mean of every metric across runs.
pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("aggregate_seeds", "no reports"))?;
    let schema = |r: &EvalReport| -> Vec<(Granularity, String)> {
        r.aspects.iter().map(|a| (a.granularity, a.aspect.clone())).collect()
    };
    if reports.iter().any(|r| schema(r) != schema(first)) {
        return Err(Error::invalid("aggregate_seeds", "reports have different aspect schemas"));
    }
    let k = reports.len() as f64;
    let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    let aspects = (0..first.aspects.len())
        .map(|i| AspectMetrics {
            granularity: first.aspects[i].granularity,
            aspect: first.aspects[i].aspect.clone(),
            pcc: mean(&|r| r.aspects[i].pcc),
            mse: mean(&|r| r.aspects[i].mse),
            count: first.aspects[i].count,
        })
        .collect();
    Ok(EvalReport {
        format: REPORT_FORMAT.to_string(),
        version: REPORT_VERSION,
        aspects,
        mdd: MddMetrics {
            precision: mean(&|r| r.mdd.precision),
            recall: mean(&|r| r.mdd.recall),
            f1: mean(&|r| r.mdd.f1),
            per: mean(&|r| r.mdd.per),
        },
        seeds: reports.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
        aggregation: if reports.len() == 1 { first.aggregation.clone() } else { "mean".to_string() },
        run_config: first.run_config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcc_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((pcc(&x, &x) - 1.0).abs() < 1e-15);
        assert!((pcc(&x, &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!(pcc(&x, &[1.0, 1.0, 1.0]).is_nan());
    }

    #[test]
    fn detection_worked_example() {
        // K R AY M, realized K R IH M, diagnosed K R IH T
        let (k, r, ay, m, ih, t) = (19, 27, 5, 21, 16, 30);
        let d = mdd_detection_metrics(&[k, r, ih, t], &[k, r, ay, m], &[k, r, ih, m], &[true; 4]).unwrap();
        assert_eq!((d.tp, d.fp, d.fn_), (1, 1, 0));
        assert_eq!(d.precision, 0.5);
        assert_eq!(d.recall, 1.0);
        assert!((d.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(per(&[k, r, ih, t], &[k, r, ih, m], &[true; 4], 46).unwrap(), 0.25);
    }

    #[test]
    fn per_drops_deletions() {
        assert_eq!(per(&[1, 2], &[1, 2], &[true; 2], 46).unwrap(), 0.0);
        let hyp = strip_for_per(&[1, 2], &[true; 2], 46);
        let reference = strip_for_per(&[1, 46, 2], &[true; 3], 46);
        assert_eq!(edit_distance(&hyp, &reference), 0);
    }
}
