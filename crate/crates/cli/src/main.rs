use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use edgefed_cli::plots::emit_plots;
use edgefed_cli::runner::{execute_all, write_sweep_reports, Job, RunResult, SUMMARY_WINDOW};
use edgefed_cli::spec::{ExperimentSpec, Overrides, RunKind};
use edgefed_cli::theorem::{checks_csv, checks_table, run_battery};

#[derive(Parser)]
#[command(name = "edgefed", version, about = "Edge-federated actor-critic experiments for age-sensitive MEC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run whatever the config describes (EdgeFed training by default).
    Run(Common),
    /// Train once per omega and seed, then compare with the convergence bound.
    SweepOmega(Common),
    /// Run a non-learning baseline policy.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// random, greedy or centralized.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Check the convergence calculators against independent numerics.
    VerifyTheorem {
        #[command(flatten)]
        common: Common,
        /// Number of random parameter draws.
        #[arg(long, default_value_t = 50)]
        draws: usize,
    },
    /// Collect tidy plot tables from finished runs.
    EmitPlots {
        #[command(flatten)]
        common: Common,
        /// Directory holding runs (defaults to --out).
        #[arg(long)]
        runs: Option<PathBuf>,
        /// Also draw an SVG of the average age curves.
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file or run manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed to run; repeat for several.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of training epochs.
    #[arg(long)]
    epochs: Option<u64>,
    /// Comma-separated federated factors.
    #[arg(long, value_delimiter = ',')]
    omega: Option<Vec<f64>>,
    /// Named scale: desk, paper or paper-large.
    #[arg(long)]
    profile: Option<String>,
}

impl Common {
    fn load(&self, kind: Option<RunKind>, baseline: Option<String>) -> Result<ExperimentSpec> {
        let ov = Overrides {
            kind,
            baseline,
            profile: self.profile.clone(),
            seeds: self.seeds.clone(),
            omegas: self.omega.clone(),
            epochs: self.epochs,
            out: self.out.clone(),
        };
        ExperimentSpec::from_file(self.config.as_deref(), &ov).context("loading experiment config")
    }
}

fn report(results: &[RunResult]) {
    for r in results {
        let tail = r.log.trailing_mean(SUMMARY_WINDOW).unwrap_or(f64::NAN);
        println!("{:<24} seed {:<4} trailing avg age {:>10.3}  -> {}", r.job.label(), r.seed, tail, r.dir.display());
    }
}

fn single_jobs(spec: &ExperimentSpec, job: Job) -> Vec<(Job, u64)> {
    spec.seeds.iter().map(|&s| (job, s)).collect()
}

fn sweep(spec: &ExperimentSpec) -> Result<ExitCode> {
    let jobs: Vec<(Job, u64)> = spec
        .seeds
        .iter()
        .flat_map(|&s| spec.omegas.iter().map(move |&omega| (Job::Edgefed { omega }, s)))
        .collect();
    let results = execute_all(spec, &jobs)?;
    report(&results);
    for dir in write_sweep_reports(spec, &results)? {
        println!("{}", std::fs::read_to_string(dir.join("report.txt"))?);
    }
    Ok(ExitCode::SUCCESS)
}

fn theorem(spec: &ExperimentSpec, draws: usize) -> Result<ExitCode> {
    let checks = run_battery(spec.seeds[0], draws);
    let dir = spec.out.join("theorem");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("checks.csv"), checks_csv(&checks))?;
    let table = checks_table(&checks);
    std::fs::write(dir.join("checks.txt"), &table)?;
    print!("{table}");
    Ok(if checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn dispatch(spec: &ExperimentSpec) -> Result<ExitCode> {
    match spec.kind {
        RunKind::Edgefed => {
            let results = execute_all(spec, &single_jobs(spec, Job::Edgefed { omega: spec.omegas[0] }))?;
            report(&results);
            Ok(ExitCode::SUCCESS)
        }
        RunKind::Baseline => {
            let results = execute_all(spec, &single_jobs(spec, Job::Baseline(spec.baseline)))?;
            report(&results);
            Ok(ExitCode::SUCCESS)
        }
        RunKind::SweepOmega => sweep(spec),
        RunKind::VerifyTheorem => theorem(spec, 50),
    }
}

fn main_inner() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(c) => dispatch(&c.load(None, None)?),
        Command::SweepOmega(c) => sweep(&c.load(Some(RunKind::SweepOmega), None)?),
        Command::Baseline { common, kind } => dispatch(&common.load(Some(RunKind::Baseline), kind)?),
        Command::VerifyTheorem { common, draws } => theorem(&common.load(Some(RunKind::VerifyTheorem), None)?, draws),
        Command::EmitPlots { common, runs, svg } => {
            let spec = common.load(None, None)?;
            let runs = runs.unwrap_or_else(|| spec.out.clone());
            for p in emit_plots(&runs, &spec.out.join("plots"), svg)? {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
