//! Executes training and baseline runs and lays out their outputs.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use edgefed_core::convergence::{empirical_vs_bound_report, ReportOptions, RunLog};
use edgefed_core::metrics::{summarize, summary_csv};
use edgefed_core::trainer::{run_baseline, train_loop, AgentEnsemble, BaselineKind};
use edgefed_core::{MetricsLog, World};

use crate::manifest::Manifest;
use crate::spec::{ExperimentSpec, RunKind};

/// Trailing window used for run summaries.
pub const SUMMARY_WINDOW: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Job {
    Edgefed { omega: f64 },
    Baseline(BaselineKind),
}

impl Job {
    pub fn label(&self) -> String {
        match self {
            Job::Edgefed { omega } => format!("edgefed_w{omega}"),
            Job::Baseline(k) => format!("baseline_{}", k.name()),
        }
    }

    fn kind(&self) -> RunKind {
        match self {
            Job::Edgefed { .. } => RunKind::Edgefed,
            Job::Baseline(_) => RunKind::Baseline,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub job: Job,
    pub seed: u64,
    pub dir: PathBuf,
    pub log: MetricsLog,
}

pub fn run_dir(out: &Path, job: &Job, seed: u64) -> PathBuf {
    out.join(job.label()).join(format!("seed_{seed}"))
}

/// Runs one job for one seed and writes its directory.
pub fn execute(spec: &ExperimentSpec, job: Job, seed: u64) -> Result<RunResult> {
    let omega = match job {
        Job::Edgefed { omega } => omega,
        Job::Baseline(_) => spec.train.omega,
    };
    let mut resolved = spec.resolve(job.kind(), seed, omega);
    if let Job::Baseline(k) = job {
        resolved.experiment.baseline = Some(k.name().to_string());
    }
    let dir = run_dir(&spec.out, &job, seed);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut world = World::new(resolved.sim.clone())?;
    let log = match job {
        Job::Edgefed { .. } => {
            let mut ens = AgentEnsemble::new(&resolved.sim, &resolved.train)?;
            let ckpt = dir.join("checkpoints");
            let log = train_loop(&mut world, &mut ens, &resolved.train, Some(&ckpt))?;
            ens.write_checkpoint(&ckpt.join("final"))?;
            log
        }
        Job::Baseline(k) => run_baseline(k, &mut world, &resolved.train)?,
    };
    log.write_dir(&dir)?;
    let summary = summarize(&job.label(), &log, SUMMARY_WINDOW)?;
    std::fs::write(dir.join("summary.csv"), summary_csv(&[summary]))?;
    let files = ["metrics.csv", "ages.csv", "deliveries.csv", "summary.csv"];
    Manifest::new(resolved, &dir, &files)?.write(&dir)?;
    Ok(RunResult { job, seed, dir, log })
}

/// Runs every `(job, seed)` pair on a small thread pool; results keep input order.
pub fn execute_all(spec: &ExperimentSpec, jobs: &[(Job, u64)]) -> Result<Vec<RunResult>> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(jobs.len()).max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunResult>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(job, seed)) = jobs.get(i) else { break };
                let r = execute(spec, job, seed);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result slots poisoned").into_iter().map(|r| r.expect("job not run")).collect()
}

/// Per-seed convergence reports of a sweep, written under `out/sweep_report`.
pub fn write_sweep_reports(spec: &ExperimentSpec, results: &[RunResult]) -> Result<Vec<PathBuf>> {
    let root = spec.out.join("sweep_report");
    let mut written = Vec::new();
    for &seed in &spec.seeds {
        let mine: Vec<&RunResult> =
            results.iter().filter(|r| r.seed == seed && matches!(r.job, Job::Edgefed { .. })).collect();
        let cfgs: Vec<_> = mine
            .iter()
            .map(|r| {
                let Job::Edgefed { omega } = r.job else { unreachable!() };
                edgefed_core::TrainConfig { seed, omega, ..spec.train.clone() }
            })
            .collect();
        let runs: Vec<RunLog<'_>> = mine.iter().zip(&cfgs).map(|(r, cfg)| RunLog { cfg, log: &r.log }).collect();
        let report = empirical_vs_bound_report(&runs, spec.sim.num_edges, ReportOptions::default())
            .with_context(|| format!("convergence report for seed {seed}"))?;
        let dir = root.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("report.csv"), report.to_csv())?;
        std::fs::write(dir.join("report.txt"), report.to_table())?;
        written.push(dir);
    }
    Ok(written)
}
