//! The `hmamba` command line: argument types, the config file and one
//! function per subcommand. The binary is a thin wrapper around [`run`].

mod config;
mod score;

pub use config::{RunConfig, KEYS};
pub use score::{render_score, FeatureBlock, ScoreRequest, ScoredUtterance, WordSpan, SCORE_FORMAT};

/// Written by `gen-synth`: the first test utterance as a `score` input.
pub const SAMPLE_REQUEST_FILE: &str = "sample_request.json";

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{bayes_ceiling, generate_synthetic, write_synthetic, DataSet, SynthConfig};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{Checkpoint, HMambaModel};
use crate::numerics::{Tape, Tensor};
use crate::params::{ParamStore, Scope};
use crate::rng::substream;
use crate::ssm::{count_params_and_macs, BlockCost, BlockKind, BlockSpec};
use crate::trainer::{evaluate, run_protocol, ProtocolOptions};

#[derive(Debug, Parser)]
#[command(name = "hmamba", version, about = "Joint pronunciation scoring and mispronunciation detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with planted signal.
    GenSynth(GenSynthArgs),
    /// Train one model per seed and write the seed-averaged test report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a data split.
    Eval(EvalArgs),
    /// Score a single utterance.
    Score(ScoreArgs),
    /// Compare MDD metrics across decoupling exponents.
    SweepAlpha(SweepArgs),
    /// Parameter, MAC and timing comparison of the two block types.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Training utterances.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    #[arg(long, default_value_t = 12)]
    pub phones_per_utt: usize,
    #[arg(long, default_value_t = 0.15)]
    pub error_rate: f64,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

/// Config file plus `--set key=value` overrides.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self, seeds: Option<&str>) -> Result<RunConfig> {
        let mut cfg = RunConfig::resolve(self.config.as_deref(), &self.set)?;
        if let Some(s) = seeds {
            cfg.set("train.seeds", s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated seeds; overrides `train.seeds`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-seed `curves.csv`.
    #[arg(long)]
    pub curves: bool,
    /// Also write `report.csv`.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report path; a `.csv` extension selects the CSV layout.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Also dump per-utterance predictions as JSONL.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Training seed of the checkpoint, recorded in the report.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub utt: PathBuf,
    /// Print JSON instead of the text layout.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "0,0.3,0.5,0.7,0.9")]
    pub alphas: String,
    #[arg(long)]
    pub seeds: Option<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Table path; a `.csv` extension selects the CSV layout.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 50)]
    pub seq_len: usize,
    /// Timed forward passes per block type; 0 skips timing.
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 validation error, 2 runtime error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a).map(|_| ()),
        Command::Score(a) => score(a),
        Command::SweepAlpha(a) => sweep_alpha(a).map(|_| ()),
        Command::Bench(a) => bench(a).map(|_| ()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// `#`-prefixed preamble carrying the format tag and effective config.
fn csv_preamble(format: &str, version: u32, run_config: &serde_json::Value) -> String {
    format!("# format: {format} v{version}\n# run_config: {run_config}\n")
}

pub fn gen_synth(a: &GenSynthArgs) -> Result<()> {
    let mut cfg = SynthConfig {
        n_train: a.n,
        n_test: a.n_test,
        phones_per_utt: a.phones_per_utt,
        error_rate: a.error_rate,
        seed: a.seed,
        ..Default::default()
    };
    if let Some(n) = a.noise {
        cfg.noise = n;
    }
    cfg.validate()?;
    if !a.force && a.out.is_dir() {
        let non_empty = fs::read_dir(&a.out)
            .map_err(|e| Error::io(&a.out, e))?
            .next()
            .is_some();
        if non_empty {
            return Err(Error::Config(format!(
                "{} is not empty; pass --force to overwrite",
                a.out.display()
            )));
        }
    }
    let data = generate_synthetic(&cfg)?;
    write_synthetic(&data, &a.out)?;
    if let Some(rec) = data.test.records.first() {
        let req = ScoreRequest::from_record(rec, data.test.inventory(), &data.feature_table()?)?;
        write_file(&a.out.join(SAMPLE_REQUEST_FILE), &(serde_json::to_string_pretty(&req)? + "\n"))?;
    }
    let table = data.feature_table()?;
    let ceiling = bayes_ceiling(&data.test, &table, &cfg)?;
    println!(
        "wrote {} train / {} test utterances to {}; test ceiling: MDD F1 {:.3}, phone PCC {:.3}",
        data.train.records.len(),
        data.test.records.len(),
        a.out.display(),
        ceiling.detection.f1,
        ceiling.phone_pcc
    );
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = a.config.resolve(a.seeds.as_deref())?;
    let data = DataSet::load(&a.data)?;
    let model_cfg = cfg.model.clone().with_data(&data);
    model_cfg.validate()?;
    let opts = ProtocolOptions {
        curves_csv: a.curves,
        report_csv: a.csv,
    };
    let outcome = run_protocol(&data, &model_cfg, &cfg.train, &cfg.seeds, &cfg.to_json(), Some(&a.out), opts)?;
    print_summary(&outcome.aggregate);
    Ok(())
}

fn print_summary(r: &EvalReport) {
    for m in &r.aspects {
        println!("{:<10} {:<13} PCC {:>7.4}  MSE {:>8.4}", m.granularity.name(), m.aspect, m.pcc, m.mse);
    }
    println!(
        "MDD        precision {:.4}  recall {:.4}  F1 {:.4}  PER {:.4}",
        r.mdd.precision, r.mdd.recall, r.mdd.f1, r.mdd.per
    );
}

/// Loads a checkpoint and checks it against the data set it will read.
pub fn load_model_for(path: &Path, data: &DataSet) -> Result<(HMambaModel, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let model = HMambaModel::from_checkpoint(&ck)?;
    let cfg = &model.config;
    if cfg.manifest != data.features.manifest {
        return Err(Error::Checkpoint(format!(
            "{}: feature manifest differs from the data set's",
            path.display()
        )));
    }
    if cfg.inventory != data.train.header.inventory || cfg.score_ranges != data.train.header.score_ranges {
        return Err(Error::Checkpoint(format!(
            "{}: phone inventory or score ranges differ from the data set's",
            path.display()
        )));
    }
    Ok((model, ck))
}

pub fn eval(a: &EvalArgs) -> Result<EvalReport> {
    let data = DataSet::load(&a.data)?;
    let (model, ck) = load_model_for(&a.model, &data)?;
    let corpus = match a.split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    let mut ev = evaluate(&model, corpus, &data.features, a.seed)?;
    ev.report.run_config = ck.run_config.clone();
    if let Some(p) = &a.predictions {
        let mut text = String::new();
        for pred in &ev.predictions {
            text.push_str(&serde_json::to_string(pred)?);
            text.push('\n');
        }
        write_file(p, &text)?;
    }
    let r = &ev.report;
    let text = if is_csv(&a.out) {
        csv_preamble(&r.format, r.version, r.run_config.as_ref().unwrap_or(&serde_json::Value::Null)) + &r.to_csv()
    } else {
        serde_json::to_string_pretty(r)? + "\n"
    };
    write_file(&a.out, &text)?;
    print_summary(r);
    Ok(ev.report)
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.model)?;
    let model = HMambaModel::from_checkpoint(&ck)?;
    let req = ScoreRequest::load(&a.utt)?;
    let scored = req.score(&model)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&scored)?);
    } else {
        print!("{}", render_score(&scored));
    }
    Ok(())
}

pub const SWEEP_FORMAT: &str = "hmamba-sweep";
pub const SWEEP_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    #[serde(with = "crate::metrics::nan_as_null")]
    pub precision: f64,
    #[serde(with = "crate::metrics::nan_as_null")]
    pub recall: f64,
    #[serde(with = "crate::metrics::nan_as_null")]
    pub f1: f64,
    #[serde(with = "crate::metrics::nan_as_null")]
    pub per: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub format: String,
    pub version: u32,
    pub seeds: Vec<u64>,
    pub run_config: serde_json::Value,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let f = |x: f64| if x.is_finite() { x.to_string() } else { String::new() };
        let mut out = csv_preamble(&self.format, self.version, &self.run_config);
        out.push_str("alpha,precision,recall,f1,per\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.alpha, f(r.precision), f(r.recall), f(r.f1), f(r.per)));
        }
        out
    }
}

/// Seed-averaged test-split MDD metrics for each decoupling exponent, in
/// the given order. `alpha = 0` is the plain cross-entropy baseline.
pub fn run_sweep(data: &DataSet, cfg: &RunConfig, alphas: &[f64]) -> Result<SweepTable> {
    if alphas.is_empty() {
        return Err(Error::Config("no alphas given".into()));
    }
    let model_cfg = cfg.model.clone().with_data(data);
    model_cfg.validate()?;
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut c = cfg.clone();
        c.train.loss.alpha = alpha;
        c.train.validate()?;
        let out = run_protocol(data, &model_cfg, &c.train, &c.seeds, &c.to_json(), None, ProtocolOptions::default())?;
        let m = &out.aggregate.mdd;
        log::info!("alpha {alpha}: P {:.4} R {:.4} F1 {:.4} PER {:.4}", m.precision, m.recall, m.f1, m.per);
        rows.push(SweepRow {
            alpha,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            per: m.per,
        });
    }
    Ok(SweepTable {
        format: SWEEP_FORMAT.to_string(),
        version: SWEEP_VERSION,
        seeds: cfg.seeds.clone(),
        run_config: cfg.to_json(),
        rows,
    })
}

pub fn sweep_alpha(a: &SweepArgs) -> Result<SweepTable> {
    let cfg = a.config.resolve(a.seeds.as_deref())?;
    let alphas: Vec<f64> = a
        .alphas
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad alpha `{s}`"))))
        .collect::<Result<_>>()?;
    if let Some(bad) = alphas.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Config(format!("alpha {bad} must be a non-negative number")));
    }
    let data = DataSet::load(&a.data)?;
    let table = run_sweep(&data, &cfg, &alphas)?;
    let text = if is_csv(&a.out) {
        table.to_csv()
    } else {
        serde_json::to_string_pretty(&table)? + "\n"
    };
    write_file(&a.out, &text)?;
    print!("{}", table.to_csv().lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n") + "\n");
    Ok(table)
}

pub const BENCH_FORMAT: &str = "hmamba-bench";
pub const BENCH_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockTiming {
    pub block_type: BlockKind,
    pub reps: usize,
    /// Mean wall-clock milliseconds per forward pass.
    pub forward_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format: String,
    pub version: u32,
    pub run_config: serde_json::Value,
    pub d: usize,
    pub seq_len: usize,
    pub blocks: Vec<BlockCost>,
    /// Mamba over Transformer.
    pub params_ratio: f64,
    pub macs_ratio: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timing: Vec<BlockTiming>,
}

fn time_block(spec: &BlockSpec, seq_len: usize, reps: usize) -> Result<f64> {
    let mut store = ParamStore::new();
    let mut rng = substream(0, "init");
    let block = {
        let mut scope = Scope::new(&mut store, &mut rng);
        spec.build(&mut scope, "bench")?
    };
    let data_rng = substream(0, "data");
    let values = data_rng.sample_iter(StandardNormal).take(seq_len * spec.d).collect();
    let x = Tensor::new(vec![seq_len, spec.d], values)?;
    let start = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let p = store.bind_constants(&tape);
        block.forward(&p, tape.constant(x.clone()))?;
    }
    Ok(start.elapsed().as_secs_f64() * 1e3 / reps as f64)
}

/// Builds both block types at the configured width and compares them.
pub fn run_bench(cfg: &RunConfig, seq_len: usize, reps: usize) -> Result<BenchReport> {
    if seq_len == 0 {
        return Err(Error::Config("--seq-len must be positive".into()));
    }
    let base = cfg.model.block_spec();
    let specs = [BlockKind::Mamba, BlockKind::Transformer].map(|kind| BlockSpec { kind, ..base.clone() });
    let blocks = specs
        .iter()
        .map(|s| count_params_and_macs(s, seq_len))
        .collect::<Result<Vec<_>>>()?;
    let timing = if reps == 0 {
        Vec::new()
    } else {
        specs
            .iter()
            .map(|s| {
                Ok(BlockTiming {
                    block_type: s.kind,
                    reps,
                    forward_ms: time_block(s, seq_len, reps)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(BenchReport {
        format: BENCH_FORMAT.to_string(),
        version: BENCH_VERSION,
        run_config: cfg.to_json(),
        d: cfg.model.d,
        seq_len,
        params_ratio: blocks[0].params as f64 / blocks[1].params as f64,
        macs_ratio: blocks[0].macs as f64 / blocks[1].macs as f64,
        blocks,
        timing,
    })
}

pub fn bench(a: &BenchArgs) -> Result<BenchReport> {
    let cfg = a.config.resolve(None)?;
    let report = run_bench(&cfg, a.seq_len, a.reps)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => write_file(p, &text)?,
        None => print!("{text}"),
    }
    Ok(report)
}
