use std::fs;
use std::path::Path;

use super::{evaluate, train, TrainConfig, TrainOutcome};
use crate::corpus::DataSet;
use crate::error::{Error, Result};
use crate::metrics::{aggregate_seeds, EvalReport};
use crate::model::{HMambaConfig, HMambaModel};

pub const REPORT_FILE: &str = "report.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const REPORT_CSV_FILE: &str = "report.csv";

/// Optional artifacts beyond the per-seed history, two checkpoints and the
/// aggregate report.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProtocolOptions {
    pub curves_csv: bool,
    pub report_csv: bool,
}

pub struct ProtocolOutcome {
    pub runs: Vec<(u64, TrainOutcome)>,
    /// Test-split report of each seed's best-dev model.
    pub reports: Vec<EvalReport>,
    pub aggregate: EvalReport,
}

pub fn seed_dir(out: &Path, seed: u64) -> std::path::PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Trains one model per seed, evaluates each best-dev checkpoint on the test
/// split and averages the reports.
pub fn run_protocol(
    data: &DataSet,
    model_cfg: &HMambaConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
    run_config: &serde_json::Value,
    out: Option<&Path>,
    opts: ProtocolOptions,
) -> Result<ProtocolOutcome> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    model_cfg.validate()?;
    train_cfg.validate()?;
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for &seed in seeds {
        let dir = out.map(|o| seed_dir(o, seed));
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let model = HMambaModel::new(model_cfg.clone(), seed)?;
        let outcome = train(&data.train, &data.features, model, train_cfg, seed, run_config, dir.as_deref())?;
        let mut report = evaluate(&outcome.best, &data.test, &data.features, seed)?.report;
        report.run_config = Some(run_config.clone());
        if let Some(d) = &dir {
            if opts.curves_csv {
                let p = d.join(CURVES_FILE);
                fs::write(&p, outcome.curves_csv()).map_err(|e| Error::io(&p, e))?;
            }
        }
        log::info!(
            "seed {seed}: test phone PCC {:.4}, MDD F1 {:.4}",
            report.aspect(crate::corpus::Granularity::Phone, "accuracy").map_or(f64::NAN, |a| a.pcc),
            report.mdd.f1
        );
        reports.push(report);
        runs.push((seed, outcome));
    }
    let aggregate = aggregate_seeds(&reports)?;
    if let Some(o) = out {
        let p = o.join(REPORT_FILE);
        fs::write(&p, serde_json::to_string_pretty(&aggregate)? + "\n").map_err(|e| Error::io(&p, e))?;
        if opts.report_csv {
            let p = o.join(REPORT_CSV_FILE);
            fs::write(&p, aggregate.to_csv()).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(ProtocolOutcome {
        runs,
        reports,
        aggregate,
    })
}
