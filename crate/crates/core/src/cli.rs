//! Command-line front end.
//!
//! Settings resolve as flags, then the `--config` TOML file, then defaults;
//! the resolved values are echoed into every JSON output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::corr::{sample_correlation, DataMatrix};
use crate::error::{Error, Result};
use crate::score::{score_table, QNorm};
use crate::simgen::{run_replicates, write_replicates_csv, SimScenario, METRIC_NAMES};
use crate::tuning::{fit, CvConfig, DeltaChoice, FitSettings, MuChoice, RankMethod};

#[derive(Debug, Parser)]
#[command(name = "replicadetect", version, about = "Replicate-feature detection and pure-variable factor estimation")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "REPLICADETECT_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the pure partition, latent dimension and loadings from a CSV.
    Fit(FitArgs),
    /// Pairwise parallel-row scores of a CSV.
    Score(ScoreArgs),
    /// Run a simulation scenario over replicates.
    Simulate(SimulateArgs),
    /// Sweep one scenario parameter and write long-format CSV.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineFlags {
    /// Norm index q (a number >= 1 or "inf").
    #[arg(long)]
    pub q: Option<QNorm>,
    /// Fixed grouping threshold.
    #[arg(long, conflicts_with = "delta_cv")]
    pub delta: Option<f64>,
    /// Choose the grouping threshold by cross-validation.
    #[arg(long)]
    pub delta_cv: bool,
    /// Fixed eigenvalue threshold for the latent dimension.
    #[arg(long, conflicts_with = "cv_rank")]
    pub mu: Option<f64>,
    /// Cross-validated rank selection method.
    #[arg(long, value_parser = parse_rank_method)]
    pub cv_rank: Option<RankMethod>,
    /// Remove pure-noise features before fitting.
    #[arg(long)]
    pub prescreen: bool,
    /// Seed for sample splitting.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cross-validation folds (2 or 10).
    #[arg(long)]
    pub folds: Option<usize>,
    /// TOML file with default settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_rank_method(s: &str) -> std::result::Result<RankMethod, String> {
    match s {
        "direct-k" => Ok(RankMethod::DirectK),
        "mu-grid" => Ok(RankMethod::MuGrid),
        other => Err(format!("unknown rank method '{other}' (expected direct-k or mu-grid)")),
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV (rows are observations).
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSON (stdout when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub q: Option<QNorm>,
    /// Report only the k smallest pairs.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario TOML or JSON.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    /// Aggregate JSON (stdout when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-replicate CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Base scenario (defaults when omitted).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Parameter to vary: n, p, k, alpha, rho_z, eta or n0.
    #[arg(long)]
    pub vary: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Long-format CSV (stdout when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum NumberOrCv {
    Number(f64),
    Word(CvWord),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum CvWord {
    Cv,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    q: Option<QNorm>,
    delta: Option<NumberOrCv>,
    mu: Option<NumberOrCv>,
    cv_rank: Option<RankMethod>,
    prescreen: Option<bool>,
    seed: Option<u64>,
    folds: Option<usize>,
    n_grid: Option<usize>,
}

fn read_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Merges flags over the config file over defaults.
pub fn resolve_settings(flags: &PipelineFlags) -> Result<FitSettings> {
    let file = match &flags.config {
        Some(p) => read_config(p)?,
        None => FileConfig::default(),
    };
    let defaults = FitSettings::default();
    let q = flags.q.or(file.q).unwrap_or(defaults.q);
    let delta = if let Some(d) = flags.delta {
        DeltaChoice::Fixed(d)
    } else if flags.delta_cv {
        DeltaChoice::Cv
    } else {
        match file.delta {
            Some(NumberOrCv::Number(d)) => DeltaChoice::Fixed(d),
            Some(NumberOrCv::Word(CvWord::Cv)) | None => DeltaChoice::Cv,
        }
    };
    let method = flags.cv_rank.or(file.cv_rank).unwrap_or_default();
    let mu = if let Some(m) = flags.mu {
        MuChoice::Fixed(m)
    } else if flags.cv_rank.is_some() {
        MuChoice::Cv(method)
    } else {
        match file.mu {
            Some(NumberOrCv::Number(m)) => MuChoice::Fixed(m),
            _ => MuChoice::Cv(method),
        }
    };
    let cv = CvConfig {
        seed: flags.seed.or(file.seed).unwrap_or(defaults.cv.seed),
        folds: flags.folds.or(file.folds).unwrap_or(defaults.cv.folds),
        n_grid: file.n_grid.unwrap_or(defaults.cv.n_grid),
        rank_method: method,
        ..defaults.cv
    };
    cv.validate()?;
    Ok(FitSettings { q, delta, mu, prescreen: flags.prescreen || file.prescreen.unwrap_or(false), cv })
}

fn write_output(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            w.write_all(body.as_bytes())?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        None => println!("{body}"),
    }
    Ok(())
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize")
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let settings = resolve_settings(&args.pipeline)?;
    let x = DataMatrix::from_csv_path(&args.input)?;
    let out = fit(&x, &settings)?;
    let mut v = out.to_json(&settings);
    if let Some(names) = x.column_names() {
        v["column_names"] = json!(names);
    }
    write_output(args.output.as_deref(), &pretty(&v))
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let q = args.q.unwrap_or(QNorm::TWO);
    let x = DataMatrix::from_csv_path(&args.input)?;
    let model = sample_correlation(&x, true)?;
    let table = score_table(&model.r_hat, q)?;
    let v = match args.top {
        Some(k) => {
            let pairs: Vec<_> = table.smallest(k).into_iter().map(|(i, j, s)| json!({"i": i, "j": j, "score": s})).collect();
            json!({"q": q, "p": table.p(), "pairs": pairs})
        }
        None => table.to_json(),
    };
    write_output(args.output.as_deref(), &pretty(&v))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let settings = resolve_settings(&args.pipeline)?;
    let sc = SimScenario::from_path(&args.scenario)?;
    let summary = run_replicates(&sc, args.reps, &settings)?;
    if let Some(path) = &args.csv {
        write_replicates_csv(&summary, BufWriter::new(File::create(path)?))?;
    }
    let v = json!({
        "scenario": summary.scenario,
        "settings": settings,
        "reps": summary.reps,
        "failures": summary.failures,
        "aggregates": summary.aggregates,
    });
    write_output(args.output.as_deref(), &pretty(&v))
}

fn with_parameter(base: &SimScenario, name: &str, value: f64) -> Result<SimScenario> {
    let mut sc = base.clone();
    let as_count = || {
        if value >= 0.0 && value.fract() == 0.0 {
            Ok(value as usize)
        } else {
            Err(Error::InvalidArgument(format!("{name} needs a nonnegative integer, got {value}")))
        }
    };
    match name {
        "n" => sc.n = as_count()?,
        "p" => sc.p = as_count()?,
        "k" => sc.k = as_count()?,
        "n0" => sc.n0 = as_count()?,
        "alpha" => sc.alpha = value,
        "rho_z" => sc.rho_z = value,
        "eta" => sc.eta = value,
        other => return Err(Error::InvalidArgument(format!("cannot vary unknown parameter '{other}'"))),
    }
    sc.validate()?;
    Ok(sc)
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let settings = resolve_settings(&args.pipeline)?;
    let base = match &args.scenario {
        Some(p) => SimScenario::from_path(p)?,
        None => SimScenario::default(),
    };
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["parameter", "value", "metric", "mean", "sd", "count"])?;
        for &value in &args.values {
            let sc = with_parameter(&base, &args.vary, value)?;
            let summary = run_replicates(&sc, args.reps, &settings)?;
            for name in METRIC_NAMES {
                let (mean, sd, count) = summary
                    .aggregates
                    .get(name)
                    .map(|a| (a.mean.to_string(), a.sd.to_string(), a.count))
                    .unwrap_or_default();
                w.write_record([args.vary.clone(), value.to_string(), name.to_string(), mean, sd, count.to_string()])?;
            }
        }
        w.flush()?;
    }
    let text = String::from_utf8(buf).expect("csv output is utf-8");
    write_output(args.output.as_deref(), text.trim_end())
}

/// Exit status for an error: 2 when no parallel pairs exist, 1 otherwise.
pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NoParallelPairs => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Score(a) => cmd_score(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
