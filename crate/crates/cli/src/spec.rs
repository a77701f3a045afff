//! Experiment specification: a TOML file layered over a named profile,
//! then over command-line flags.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use edgefed_core::profile::Profile;
use edgefed_core::trainer::{validate_omega, BaselineKind};
use edgefed_core::{SimConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    Edgefed,
    Baseline,
    SweepOmega,
    VerifyTheorem,
}

/// The `[experiment]` table of a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_kind")]
    pub kind: RunKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub omegas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_kind() -> RunKind {
    RunKind::Edgefed
}

fn default_profile() -> String {
    "desk".into()
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub kind: Option<RunKind>,
    pub baseline: Option<String>,
    pub profile: Option<String>,
    pub seeds: Vec<u64>,
    pub omegas: Option<Vec<f64>>,
    pub epochs: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: RunKind,
    pub baseline: BaselineKind,
    pub profile: Profile,
    pub profile_name: String,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Federated factors to run; a single entry outside sweeps.
    pub omegas: Vec<f64>,
    pub out: PathBuf,
}

/// Everything needed to reproduce one run; the manifest body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub experiment: ExperimentSection,
    pub sim: SimConfig,
    pub train: TrainConfig,
}

impl ResolvedRun {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing run config")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn config_hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Top-level tables a spec file may contain.
const SECTIONS: [&str; 4] = ["experiment", "sim", "train", "provenance"];

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn section<'a>(doc: &'a toml::Table, name: &str) -> Result<Option<&'a toml::Table>> {
    match doc.get(name) {
        None => Ok(None),
        Some(toml::Value::Table(t)) => Ok(Some(t)),
        Some(_) => bail!("`{name}` must be a table"),
    }
}

fn layered<T>(base: &T, over: Option<&toml::Table>, name: &str) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut table = toml::Table::try_from(base).with_context(|| format!("encoding default [{name}]"))?;
    if let Some(o) = over {
        merge(&mut table, o);
    }
    T::deserialize(toml::Value::Table(table)).with_context(|| format!("invalid [{name}] section"))
}

impl ExperimentSpec {
    /// Resolves a spec from TOML text (empty text means all defaults).
    pub fn from_toml(text: &str, ov: &Overrides) -> Result<Self> {
        let doc: toml::Table = toml::from_str(text).context("spec is not valid TOML")?;
        if let Some(bad) = doc.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            bail!("unknown section `{bad}` (expected one of {})", SECTIONS.join(", "));
        }
        let exp: ExperimentSection = match section(&doc, "experiment")? {
            Some(t) => ExperimentSection::deserialize(toml::Value::Table(t.clone())).context("invalid [experiment] section")?,
            None => toml::from_str("").expect("empty experiment section"),
        };
        let profile_name = ov.profile.clone().unwrap_or(exp.profile.clone());
        let profile = Profile::from_str(&profile_name)?;
        let sim: SimConfig = layered(&profile.sim(), section(&doc, "sim")?, "sim")?;
        let mut train: TrainConfig = layered(&profile.train(), section(&doc, "train")?, "train")?;
        if let Some(e) = ov.epochs {
            train.max_epochs = e;
        }
        sim.validate()?;

        let kind = ov.kind.unwrap_or(exp.kind);
        let baseline_name = ov.baseline.clone().or(exp.baseline.clone()).unwrap_or_else(|| "random".into());
        let baseline = BaselineKind::from_str(&baseline_name)?;
        let seeds = if !ov.seeds.is_empty() {
            ov.seeds.clone()
        } else if !exp.seeds.is_empty() {
            exp.seeds.clone()
        } else {
            vec![train.seed]
        };
        let mut omegas = ov.omegas.clone().unwrap_or(exp.omegas.clone());
        if omegas.is_empty() {
            omegas = match kind {
                RunKind::SweepOmega => {
                    let mut v = vec![1.0 / sim.num_edges as f64, 0.5, 1.0];
                    v.sort_by(f64::total_cmp);
                    v.dedup();
                    v
                }
                _ => vec![train.omega],
            };
        }
        for &w in &omegas {
            validate_omega(w, sim.num_edges)?;
        }
        if kind != RunKind::SweepOmega && omegas.len() > 1 {
            bail!("only sweep-omega accepts more than one omega");
        }
        train.omega = omegas[0];
        train.validate(sim.num_edges)?;
        let out = ov.out.clone().or(exp.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));
        Ok(Self { kind, baseline, profile, profile_name, sim, train, seeds, omegas, out })
    }

    pub fn from_file(path: Option<&std::path::Path>, ov: &Overrides) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        Self::from_toml(&text, ov)
    }

    /// Configuration of one concrete run, with both seeds set to `seed`.
    pub fn resolve(&self, kind: RunKind, seed: u64, omega: f64) -> ResolvedRun {
        let sim = SimConfig { seed, ..self.sim.clone() };
        let train = TrainConfig { seed, omega, ..self.train.clone() };
        ResolvedRun {
            experiment: ExperimentSection {
                kind,
                baseline: (kind == RunKind::Baseline).then(|| self.baseline.name().to_string()),
                profile: self.profile_name.clone(),
                seeds: vec![seed],
                omegas: vec![omega],
                out: None,
            },
            sim,
            train,
        }
    }
}
