//! Tidy plot tables gathered from a directory of finished runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use edgefed_core::metrics::{summarize, summary_csv, throughput};
use edgefed_core::MetricsLog;

use crate::manifest::{Manifest, MANIFEST_FILE};
use crate::runner::SUMMARY_WINDOW;
use crate::spec::RunKind;

pub struct FoundRun {
    pub label: String,
    pub seed: u64,
    pub omega: Option<f64>,
    pub log: MetricsLog,
}

fn find_manifests(dir: &Path, skip: &Path, acc: &mut Vec<PathBuf>) -> Result<()> {
    if dir == skip {
        return Ok(());
    }
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            find_manifests(&path, skip, acc)?;
        } else if path.file_name().is_some_and(|n| n == MANIFEST_FILE) {
            acc.push(path);
        }
    }
    Ok(())
}

/// Loads every run below `runs_dir`, ordered by label then seed.
pub fn discover(runs_dir: &Path, skip: &Path) -> Result<Vec<FoundRun>> {
    let mut paths = Vec::new();
    find_manifests(runs_dir, skip, &mut paths)?;
    let mut runs = Vec::new();
    for p in paths {
        let m = Manifest::read(&p)?;
        let dir = p.parent().expect("manifest has a parent");
        let label = dir
            .parent()
            .and_then(|d| d.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        let omega = (m.run.experiment.kind == RunKind::Edgefed).then_some(m.run.train.omega);
        runs.push(FoundRun { label, seed: m.run.train.seed, omega, log: MetricsLog::read_dir(dir)? });
    }
    runs.sort_by(|a, b| (&a.label, a.seed).cmp(&(&b.label, b.seed)));
    Ok(runs)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// Writes the tidy tables (and an SVG when asked); returns the files written.
pub fn emit_plots(runs_dir: &Path, out_dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    let runs = discover(runs_dir, out_dir)?;
    anyhow::ensure!(!runs.is_empty(), "no {MANIFEST_FILE} found under {}", runs_dir.display());
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let path = out_dir.join("avg_age.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["run", "seed", "epoch", "avg_age"])?;
    for r in &runs {
        for rec in &r.log.records {
            w.write_record([r.label.clone(), r.seed.to_string(), rec.epoch.to_string(), rec.avg_age.to_string()])?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join("worst_age.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["run", "seed", "epoch", "worst_age"])?;
    for r in &runs {
        for rec in &r.log.records {
            w.write_record([r.label.clone(), r.seed.to_string(), rec.epoch.to_string(), rec.worst_age.to_string()])?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join("throughput.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["run", "seed", "epoch", "delivered_bits", "delivered_pieces"])?;
    for r in &runs {
        let t = throughput(&r.log.deliveries, r.log.records.len());
        for (i, (b, p)) in t.bits.iter().zip(&t.pieces).enumerate() {
            w.write_record([r.label.clone(), r.seed.to_string(), (i + 1).to_string(), b.to_string(), p.to_string()])?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join("omega_box.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["omega", "seed", "trailing_avg_age"])?;
    for r in &runs {
        if let (Some(omega), Some(m)) = (r.omega, r.log.trailing_mean(SUMMARY_WINDOW)) {
            w.write_record([omega.to_string(), r.seed.to_string(), m.to_string()])?;
        }
    }
    w.flush()?;
    written.push(path);

    let rows = runs
        .iter()
        .map(|r| summarize(&format!("{}/seed_{}", r.label, r.seed), &r.log, SUMMARY_WINDOW))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let path = out_dir.join("summary.csv");
    std::fs::write(&path, summary_csv(&rows))?;
    written.push(path);

    if svg {
        let path = out_dir.join("avg_age.svg");
        std::fs::write(&path, avg_age_svg(&runs))?;
        written.push(path);
    }
    Ok(written)
}

/// Seed-averaged age curve per run label.
pub fn mean_curves(runs: &[FoundRun]) -> BTreeMap<String, Vec<f64>> {
    let mut sums: BTreeMap<String, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
    for r in runs {
        let (s, c) = sums.entry(r.label.clone()).or_default();
        for (i, rec) in r.log.records.iter().enumerate() {
            if s.len() <= i {
                s.push(0.0);
                c.push(0);
            }
            s[i] += rec.avg_age;
            c[i] += 1;
        }
    }
    sums.into_iter().map(|(k, (s, c))| (k, s.iter().zip(&c).map(|(v, n)| v / *n as f64).collect())).collect()
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub fn avg_age_svg(runs: &[FoundRun]) -> String {
    let curves = mean_curves(runs);
    let (w, h, pad) = (800.0, 450.0, 50.0);
    let len = curves.values().map(Vec::len).max().unwrap_or(1).max(2);
    let top = curves.values().flatten().copied().fold(1.0, f64::max);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <text x=\"{pad}\" y=\"{ty}\">epoch (1..{len})</text>\n\
         <text x=\"5\" y=\"{pad}\">{top:.0}</text>\n",
        y0 = h - pad,
        x1 = w - pad,
        ty = h - 15.0,
    );
    let step = (len / 600).max(1);
    for (i, (label, ys)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ys
            .iter()
            .enumerate()
            .step_by(step)
            .map(|(t, y)| {
                let x = pad + (w - 2.0 * pad) * t as f64 / (len - 1) as f64;
                let y = h - pad - (h - 2.0 * pad) * y / top;
                format!("{x:.1},{y:.1}")
            })
            .collect();
        writeln!(svg, "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>", pts.join(" ")).unwrap();
        writeln!(svg, "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>", w - pad - 150.0, pad + 15.0 * i as f64).unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
