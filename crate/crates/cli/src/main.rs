//! `adasample` — train DQN sampling agents and run the comparison and sweep
//! experiments.
//!
//! Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 a `--check`
//! failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_sampling::agent::{rollout, GreedyPolicy};
use adaptive_sampling::env::SourceConfig;
use adaptive_sampling::experiment::{
    compare_checks, compare_csv, emit_plotdata, eval_episode_seed, interference_checks, interference_csv, weight_sweep_checks,
    weight_sweep_csv, Check, DqnSource, ExperimentConfig, ExperimentError, Manifest, Runner,
};
use adaptive_sampling::ingest::{load_trace, CleaningRules, IngestError};
use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "adasample", version, about = "Adaptive multi-sensor sampling with deep Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean and align a raw sensor trace.
    Ingest {
        /// Whitespace-separated trace file.
        #[arg(long)]
        trace: PathBuf,
        /// Experiment file whose replay source supplies the cleaning rules.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one agent per seed and save its network and training curve.
    Train(RunArgs),
    /// Compare policies on the same seeds.
    Compare(RunArgs),
    /// Train and evaluate under each reward-weight triple.
    SweepWeights(RunArgs),
    /// Train at zero interference and evaluate across interference levels.
    SweepInterference(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file with [env], [agent] and [experiment] tables; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds, overriding the experiment file.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: PathBuf,
    /// Network snapshot for the dqn policy; `{seed}` is replaced by each seed.
    #[arg(long, conflicts_with = "train")]
    checkpoint: Option<String>,
    /// Train the dqn policy before evaluating it.
    #[arg(long)]
    train: bool,
    /// Signal source, overriding the experiment file.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Training episodes per seed, overriding the experiment file.
    #[arg(long)]
    episodes: Option<usize>,
    /// Exit with status 3 when the experiment's expected trends do not hold.
    #[arg(long)]
    check: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Synthetic,
    Replay,
}

#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Io(anyhow::Error),
    Check,
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_io() {
            Failure::Io(e.into())
        } else {
            Failure::Config(e.into())
        }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { .. } => Failure::Io(e.into()),
            _ => Failure::Config(e.into()),
        }
    }
}

fn io_failure(err: std::io::Error, what: String) -> Failure {
    Failure::Io(anyhow::Error::new(err).context(what))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Check) => ExitCode::from(3),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest { trace, config, out } => ingest(&trace, config.as_deref(), &out),
        Command::Train(args) => train(&args),
        Command::Compare(args) => experiment(&args, "compare"),
        Command::SweepWeights(args) => experiment(&args, "sweep-weights"),
        Command::SweepInterference(args) => experiment(&args, "sweep-interference"),
    }
}

/// Load the experiment file and apply command-line overrides. Relative trace
/// paths are made absolute so the resolved copy written next to the outputs
/// can be rerun from anywhere.
fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seeds) = &args.seeds {
        config.experiment.seeds = seeds.clone();
    }
    if let Some(episodes) = args.episodes {
        config.experiment.train_episodes = episodes;
    }
    match (args.mode, &mut config.env.source) {
        (Some(Mode::Synthetic), source) => *source = SourceConfig::Synthetic,
        (Some(Mode::Replay), SourceConfig::Synthetic) => {
            return Err(Failure::Config(anyhow::anyhow!("--mode replay needs an [env.source] replay table in the config")));
        }
        (_, SourceConfig::Replay(replay)) if replay.trace.is_relative() => {
            let base = args.config.as_deref().and_then(Path::parent).unwrap_or(Path::new("."));
            let joined = base.join(&replay.trace);
            replay.trace = joined.canonicalize().map_err(|e| io_failure(e, format!("trace {}", joined.display())))?;
        }
        _ => {}
    }
    config.validate()?;
    Ok(config)
}

struct Outputs {
    dir: PathBuf,
    manifest: Manifest,
}

impl Outputs {
    fn create(dir: &Path, command: &str, config: &ExperimentConfig) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| io_failure(e, format!("creating {}", dir.display())))?;
        let toml = config.to_toml_string();
        let mut outputs = Self { dir: dir.to_path_buf(), manifest: Manifest::new(command, &toml, &config.experiment.seeds) };
        outputs.write("config.toml", &toml)?;
        Ok(outputs)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| io_failure(e, format!("writing {}", path.display())))?;
        self.manifest.record(name, contents.as_bytes());
        Ok(())
    }

    /// Write a CSV and its plot-data twin.
    fn write_table(&mut self, stem: &str, csv: &str) -> Result<(), Failure> {
        self.write(&format!("{stem}.csv"), csv)?;
        let plot = emit_plotdata(csv).context("formatting plot data").map_err(Failure::Config)?;
        self.write(&format!("{stem}.dat"), &plot)
    }

    fn finish(self) -> Result<(), Failure> {
        let path = self.dir.join("manifest.json");
        fs::write(&path, self.manifest.to_json()).map_err(|e| io_failure(e, format!("writing {}", path.display())))
    }
}

fn ingest(trace: &Path, config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let rules = match config {
        Some(path) => match ExperimentConfig::load(path)?.env.source {
            SourceConfig::Replay(replay) => replay.cleaning,
            SourceConfig::Synthetic => CleaningRules::default(),
        },
        None => CleaningRules::default(),
    };
    let (aligned, report) = load_trace(trace, &rules)?;
    fs::create_dir_all(out).map_err(|e| io_failure(e, format!("creating {}", out.display())))?;
    let mut manifest = Manifest::new("ingest", &format!("{rules:?}"), &[]);
    let report_csv = report.to_csv();
    let normalized = aligned.normalized_csv();
    for (name, contents) in [("ingest_report.csv", &report_csv), ("normalized.csv", &normalized)] {
        let path = out.join(name);
        fs::write(&path, contents).map_err(|e| io_failure(e, format!("writing {}", path.display())))?;
        manifest.record(name, contents.as_bytes());
    }
    let path = out.join("manifest.json");
    fs::write(&path, manifest.to_json()).map_err(|e| io_failure(e, format!("writing {}", path.display())))?;
    println!(
        "{} lines: {} kept, {} skipped, {} slot conflicts; {} motes over {} slots",
        report.total_lines,
        report.kept,
        report.skipped_total(),
        report.slot_conflicts,
        aligned.motes.len(),
        aligned.slots
    );
    Ok(())
}

fn train(args: &RunArgs) -> Result<(), Failure> {
    if args.checkpoint.is_some() {
        return Err(Failure::Config(anyhow::anyhow!("train does not take --checkpoint")));
    }
    let config = resolve_config(args)?;
    let base = args.config.as_deref().and_then(Path::parent);
    let runner = Runner::new(config.clone(), DqnSource::Train, base)?;
    let mut outputs = Outputs::create(&args.out, "train", &config)?;
    for &seed in &config.experiment.seeds {
        let outcome = runner.train(&config.env, seed)?;
        let last = outcome.curve.last();
        println!(
            "seed {seed}: {} episodes, {} gradient steps, final return {}",
            outcome.curve.len(),
            outcome.gradient_steps,
            last.map_or("-".to_string(), |s| format!("{:.3}", s.episode_return))
        );
        outputs.write(&format!("qnet-seed{seed}.txt"), &outcome.online.to_snapshot())?;
        outputs.write_table(&format!("curve-seed{seed}"), &outcome.curve_csv())?;
        let mut env = runner.make_env(&config.env)?;
        let mut greedy = GreedyPolicy::new(outcome.online);
        rollout(&mut env, &mut greedy, eval_episode_seed(seed, 0)).map_err(ExperimentError::from)?;
        outputs.write(&format!("episode-seed{seed}.csv"), &env.episode_csv())?;
    }
    outputs.finish()
}

fn experiment(args: &RunArgs, command: &str) -> Result<(), Failure> {
    let config = resolve_config(args)?;
    let dqn = match (&args.checkpoint, args.train) {
        (Some(template), _) => DqnSource::Checkpoint(template.clone()),
        (None, true) => DqnSource::Train,
        (None, false) => DqnSource::None,
    };
    let base = args.config.as_deref().and_then(Path::parent);
    let runner = Runner::new(config.clone(), dqn, base)?;
    let mut outputs = Outputs::create(&args.out, command, &config)?;
    let (stem, csv, checks) = match command {
        "compare" => {
            let reports = runner.run_compare()?;
            ("compare", compare_csv(&reports), compare_checks(&reports))
        }
        "sweep-weights" => {
            let rows = runner.run_weight_sweep()?;
            ("weights", weight_sweep_csv(&rows), weight_sweep_checks(&rows, "dqn"))
        }
        "sweep-interference" => {
            let rows = runner.run_interference_sweep()?;
            ("interference", interference_csv(&rows), interference_checks(&rows))
        }
        other => unreachable!("unknown experiment {other}"),
    };
    print!("{csv}");
    outputs.write_table(stem, &csv)?;
    outputs.finish()?;
    if args.check {
        report_checks(&checks)?;
    }
    Ok(())
}

fn report_checks(checks: &[Check]) -> Result<(), Failure> {
    for c in checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}
