//! The `indoornav` command line.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 3 for
//! faults at run time (including a replay that disagrees with the live
//! metrics).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use indoornav_core::decision::{Policy, RulePolicy};
use indoornav_core::sim::testbed::default_testbed;
use indoornav_core::sim::{run_trial, trial_seed, DepthSample, TrialResult, World};
use parking_lot::Mutex;

use crate::config::{
    load_calibration, load_environment, load_priors, load_structured, PriorEntry, RunConfig,
};
use crate::logs::{self, ResolvedConfig, RunManifest, LOG_SCHEMA_VERSION};
use crate::pipeline::{run_pipeline, LatencyReport, PipelineConfig};
use crate::reasoner::{ProcessReasoner, ReasonerPolicy};
use crate::report::{self, Format, LATENCY_CSV, LATENCY_JSON};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "indoornav", version, about = "Indoor drone perception and decision pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run seeded trials in the simulator.
    Simulate(SimulateArgs),
    /// Recompute metrics from a run directory and compare with the live values.
    Replay {
        dir: PathBuf,
    },
    /// Export plot data (clearance series, histogram, depth scatter, latency).
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        /// Defaults to `<dir>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a configuration file.
    ValidateConfig {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = ConfigKind::Run)]
        kind: ConfigKind,
    },
    /// Run the threaded pipeline with simulated stage delays and report latencies.
    Latency(LatencyArgs),
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// Run configuration (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment description; the built-in testbed when omitted.
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long, default_value_t = 42, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    /// Write logs here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct LatencyArgs {
    /// Pipeline configuration; the default stage set when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    pub duration_s: f64,
    /// Stop after this many completed cycles.
    #[arg(long)]
    pub cycles: Option<u64>,
    /// Draw transmission and overhead delays from their ranges.
    #[arg(long)]
    pub ranges: bool,
    /// Directory for latency.json and latency.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConfigKind {
    Run,
    Pipeline,
    Environment,
    Calibration,
    Priors,
}

/// Turns file problems met while reading inputs into configuration errors.
fn input_error(e: Error) -> Error {
    match e {
        Error::Io { .. } | Error::Schema { .. } => Error::Config(e.to_string()),
        other => other,
    }
}

fn make_policy(run: &RunConfig) -> Result<Box<dyn Policy + Send>> {
    Ok(match &run.reasoner {
        Some(r) => Box::new(ReasonerPolicy::new(
            ProcessReasoner::new(r.clone())?,
            run.policy.clone(),
            r.timeout(),
        )),
        None => Box::new(RulePolicy::new(run.policy.clone())),
    })
}

/// Runs `trials` seeded trials on up to `jobs` threads. Results come back
/// in trial order whatever the thread count.
pub fn run_batch(
    world: &World,
    run: &RunConfig,
    seed: u64,
    trials: u64,
    jobs: u64,
) -> Result<Vec<TrialResult>> {
    let slots: Vec<Mutex<Option<Result<TrialResult>>>> =
        (0..trials).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= slots.len() {
            return;
        }
        let mut cfg = run.trial.clone();
        cfg.seed = trial_seed(seed, i as u64);
        let result = make_policy(run)
            .and_then(|mut p| run_trial(world, p.as_mut(), &cfg).map_err(Error::from));
        *slots[i].lock() = Some(result);
    };
    thread::scope(|s| {
        for _ in 0..jobs.min(trials) {
            s.spawn(worker);
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("every trial index is claimed"))
        .collect()
}

fn simulate(a: &SimulateArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let mut run = match &a.config {
        Some(p) => RunConfig::load(p).map_err(input_error)?,
        None => RunConfig::default(),
    };
    run.endpoints = run.endpoints.clone().with_process_env()?;
    let world = match &a.env {
        Some(p) => load_environment(p).map_err(input_error)?,
        None => default_testbed(),
    };
    let results = run_batch(&world, &run, a.seed, a.trials, a.jobs)?;

    let mut metrics = Vec::with_capacity(results.len());
    let mut pooled: Vec<DepthSample> = Vec::new();
    for (i, r) in results.iter().enumerate() {
        pooled.extend_from_slice(&r.depth_samples);
        metrics.push(match &a.out {
            Some(dir) => logs::write_trial(dir, i as u64, r, &run)?,
            None => logs::TrialMetrics::from_result(i as u64, r, &run.trial.envelope),
        });
    }
    let summary = match &a.out {
        Some(dir) => {
            let manifest = RunManifest {
                schema_version: LOG_SCHEMA_VERSION,
                command: "simulate".into(),
                args: argv.to_vec(),
                config_path: a.config.clone(),
                env_path: a.env.clone(),
                seed: a.seed,
                trials: a.trials,
                version: env!("CARGO_PKG_VERSION").into(),
                out_dir: dir.clone(),
            };
            let resolved = ResolvedConfig {
                schema_version: LOG_SCHEMA_VERSION,
                run: run.clone(),
                environment: world.env.clone(),
            };
            logs::write_run(dir, &manifest, &resolved, &metrics, &pooled)?
        }
        None => logs::summarize(&metrics, &pooled),
    };
    let w = |e| Error::io("<stdout>", e);
    writeln!(out, "trials {}  seed {}", summary.trials, a.seed).map_err(w)?;
    for h in &summary.histogram {
        writeln!(out, "  {:<11}{:>4}", h.outcome, h.count).map_err(w)?;
    }
    writeln!(
        out,
        "landed {}  collisions {}  breaches {}  mean clearance {}",
        summary.landed,
        summary.collisions,
        summary.total_breaches,
        summary
            .mean_clearance_mm
            .map_or("n/a".into(), |m| format!("{m:.0} mm"))
    )
    .map_err(w)?;
    if let Some(dir) = &a.out {
        writeln!(out, "logs written to {}", dir.display()).map_err(w)?;
    }
    Ok(())
}

fn replay(dir: &Path, out: &mut dyn Write) -> Result<()> {
    let r = logs::replay(dir)?;
    let w = |e| Error::io("<stdout>", e);
    for t in &r.trials {
        writeln!(
            out,
            "trial {:03}: breaches {} (live {}), mean clearance {:?} (live {:?}) {}",
            t.index,
            t.replayed.breach_count,
            t.live.breach_count,
            t.replayed.mean_clearance_mm,
            t.live.mean_clearance_mm,
            if t.matches { "ok" } else { "MISMATCH" }
        )
        .map_err(w)?;
    }
    if !r.all_match {
        let bad: Vec<String> = r
            .trials
            .iter()
            .filter(|t| !t.matches)
            .map(|t| format!("{:03}", t.index))
            .collect();
        return Err(Error::Mismatch(format!(
            "replayed metrics differ from live metrics in trials {}",
            bad.join(", ")
        )));
    }
    writeln!(out, "{} trials replayed, all match", r.trials.len()).map_err(w)
}

fn report_cmd(dir: &Path, fmt: FormatArg, dest: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let data = report::build(dir)?;
    let dest = dest.map_or_else(|| dir.join("report"), Path::to_path_buf);
    let fmt = match fmt {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    for p in report::write(&data, &dest, fmt)? {
        writeln!(out, "{}", p.display()).map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn validate(file: &Path, kind: ConfigKind, out: &mut dyn Write) -> Result<()> {
    match kind {
        ConfigKind::Run => RunConfig::load(file).map(drop),
        ConfigKind::Pipeline => PipelineConfig::load(file).map(drop),
        ConfigKind::Environment => load_environment(file).map(drop),
        ConfigKind::Calibration => load_calibration(file).map(drop),
        ConfigKind::Priors => {
            load_structured::<Vec<PriorEntry>>(file).and_then(|_| load_priors(file).map(drop))
        }
    }
    .map_err(input_error)?;
    writeln!(out, "ok: {}", file.display()).map_err(|e| Error::io("<stdout>", e))
}

fn latency(a: &LatencyArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p).map_err(input_error)?,
        None if a.ranges => PipelineConfig::with_ranges(),
        None => PipelineConfig::default(),
    };
    cfg.endpoints = cfg.endpoints.clone().with_process_env()?;
    if a.cycles.is_some() {
        cfg.max_cycles = a.cycles;
    }
    if !(a.duration_s.is_finite() && a.duration_s > 0.0) {
        return Err(Error::Config("--duration-s must be positive".into()));
    }
    let run = run_pipeline(&cfg, Duration::from_secs_f64(a.duration_s))?;
    let lat: &LatencyReport = &run.latency;
    out.write_all(lat.to_csv().as_bytes())
        .map_err(|e| Error::io("<stdout>", e))?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        lat.write(&dir.join(LATENCY_JSON), &dir.join(LATENCY_CSV))?;
    }
    if !run.shutdown.forced.is_empty() {
        return Err(Error::Pipeline(format!(
            "stages did not stop in time: {}",
            run.shutdown.forced.join(", ")
        )));
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Messages go to `out` and `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let argv: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a, &argv, out),
        Command::Replay { dir } => replay(dir, out),
        Command::Report { dir, format, out: dest } => report_cmd(dir, *format, dest.as_deref(), out),
        Command::ValidateConfig { file, kind } => validate(file, *kind, out),
        Command::Latency(a) => latency(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
