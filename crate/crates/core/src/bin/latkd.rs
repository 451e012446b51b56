use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use latkd::driftgen::DriftScenario;
use latkd::harness::{
    benchmark, generate_to_dir, k_sweep, preprocess, regenerate_tables, run_experiment, ExperimentConfig,
    ExperimentOptions, PreprocessOptions, IEEE_CIS_TIME_OFFSET,
};
use latkd::registry::atomic_write;
use latkd::{LatkdError, Result};

const RUN_ROOT_ENV: &str = "LATKD_RUN_ROOT";

#[derive(Parser)]
#[command(name = "latkd", version, about = "Time-based knowledge distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a transaction CSV into monthly frame files.
    Preprocess(PreprocessArgs),
    /// Sample a synthetic drift stream.
    Generate(GenerateArgs),
    /// Train every variant, period and seed, and write the results tables.
    Experiment(ExperimentArgs),
    /// Validation AUPRC of one frame's model for every truncation start K.
    KSweep(SweepArgs),
    /// Time cumulative training against distilled training per frame.
    Benchmark(BenchmarkArgs),
    /// Rebuild the results tables of a run from its manifest.
    Report(ReportArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    transactions: PathBuf,
    #[arg(long)]
    identity: Option<PathBuf>,
    /// JSON list of column specs; defaults to the IEEE-CIS feature set.
    #[arg(long)]
    specs: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "2017-11-01")]
    start: NaiveDate,
    #[arg(long, default_value_t = 6)]
    months: usize,
    #[arg(long, default_value_t = 30)]
    label_delay_days: u32,
    #[arg(long, default_value_t = IEEE_CIS_TIME_OFFSET, allow_hyphen_values = true)]
    time_offset: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Recurring,
    Stationary,
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario JSON. Overrides `--builtin`.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "recurring")]
    builtin: Builtin,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4000)]
    rows: usize,
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

/// Values that override the configuration file.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    /// Run directory root.
    #[arg(long, env = RUN_ROOT_ENV, default_value = "runs")]
    run_root: PathBuf,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    truncation_start: Option<usize>,
    #[arg(long)]
    kl_weight: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    baseline: Option<String>,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::load(&self.config)?;
        if let Some(v) = &self.name {
            c.name = v.clone();
        }
        if let Some(v) = self.runs {
            c.runs = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.truncation_start {
            c.latkd.truncation_start = v;
        }
        if let Some(v) = self.kl_weight {
            c.latkd.kl_weight = v;
        }
        if let Some(v) = self.temperature {
            c.latkd.temperature = v;
        }
        if let Some(v) = &self.baseline {
            c.baseline = Some(v.clone());
        }
        c.validate()?;
        Ok(c)
    }

    fn run_root(&self) -> PathBuf {
        self.run_root.clone()
    }
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Stop after this many newly trained models; rerun to continue.
    #[arg(long)]
    max_new_entries: Option<usize>,
    /// Write PR-curve points under reports/pr/.
    #[arg(long)]
    pr_csv: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    variant: String,
    /// Training frame (0-based position in `train_frames`).
    #[arg(long)]
    frame: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    variant: String,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    /// Plot-ready CSV output path.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory (the one holding manifest.json).
    #[arg(long)]
    run: PathBuf,
    /// Fail unless the rebuilt tables equal the registered ones.
    #[arg(long)]
    check: bool,
    #[arg(long)]
    json: bool,
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        print!("{}", text());
    }
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    let mut opts = PreprocessOptions::new(a.transactions, a.out);
    opts.identity = a.identity;
    opts.specs = a.specs;
    opts.start = a.start;
    opts.months = a.months;
    opts.label_delay_days = a.label_delay_days;
    opts.time_offset_seconds = a.time_offset;
    let report = preprocess(&opts)?;
    emit(a.json, &report, || report.to_text())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let scenario = match (&a.scenario, a.builtin) {
        (Some(p), _) => DriftScenario::load(p)?,
        (None, Builtin::Recurring) => DriftScenario::recurring_pattern(a.seed, a.rows),
        (None, Builtin::Stationary) => DriftScenario::stationary(a.seed, a.frames, a.rows, a.dim),
    };
    let report = generate_to_dir(&scenario, &a.out)?;
    emit(a.json, &report, || {
        let mut s = String::new();
        for f in &report.frames {
            s.push_str(&format!("{}: {} / {}\n", f.label, f.nonfraud, f.fraud));
        }
        s.push_str(&format!("wrote {}\n", report.csv.display()));
        s
    })
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let config = a.overrides.load()?;
    let options = ExperimentOptions {
        max_new_entries: a.max_new_entries,
        pr_csv: a.pr_csv,
    };
    let out = run_experiment(&config, &a.overrides.run_root(), &options)?;
    let summary = serde_json::json!({
        "run": out.run_root,
        "manifest_hash": out.manifest_hash,
        "new_entries": out.new_entries,
        "complete": out.complete,
        "tables": out.tables,
    });
    emit(a.json, &summary, || match &out.tables {
        Some(t) => format!("{}\nrun: {}\nmanifest: {}\n", t.to_text(), out.run_root.display(), out.manifest_hash),
        None => format!(
            "stopped after {} new models; rerun to continue\nrun: {}\n",
            out.new_entries,
            out.run_root.display()
        ),
    })
}

fn cmd_k_sweep(a: SweepArgs) -> Result<()> {
    let config = a.overrides.load()?;
    let report = k_sweep(&config, &a.variant, a.frame, &a.overrides.run_root())?;
    emit(a.json, &report, || report.to_text())
}

fn cmd_benchmark(a: BenchmarkArgs) -> Result<()> {
    let config = a.overrides.load()?;
    let report = benchmark(&config, &a.variant, a.repetitions, &a.overrides.run_root())?;
    if let Some(path) = &a.csv {
        atomic_write(path, report.to_csv().as_bytes())?;
    }
    emit(a.json, &report, || report.to_text())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let out = regenerate_tables(&a.run)?;
    if a.check && out.matches_registered != Some(true) {
        return Err(LatkdError::Integrity {
            expected: "registered tables".into(),
            actual: "tables rebuilt from the manifest differ".into(),
        });
    }
    emit(a.json, &out.tables, || out.text.clone())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::KSweep(a) => cmd_k_sweep(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn report_error(e: &LatkdError) {
    let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::FAILURE
        }
    }
}
