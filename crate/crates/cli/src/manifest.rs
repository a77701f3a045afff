//! Run manifests: the resolved config of one run plus hashes of what it wrote.
//!
//! A manifest is itself a valid spec file, so `edgefed run --config manifest.toml`
//! replays the run.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::spec::{hex, ResolvedRun};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_hash: String,
    pub core_version: String,
    pub cli_version: String,
    /// SHA-256 of each output file, keyed by path relative to the run dir.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub run: ResolvedRun,
    pub provenance: Provenance,
}

#[derive(Serialize)]
struct ProvenanceTable<'a> {
    provenance: &'a Provenance,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl Manifest {
    /// Builds a manifest hashing `files` (relative to `dir`).
    pub fn new(run: ResolvedRun, dir: &Path, files: &[&str]) -> Result<Self> {
        let mut hashes = BTreeMap::new();
        for f in files {
            hashes.insert(f.to_string(), file_sha256(&dir.join(f))?);
        }
        let provenance = Provenance {
            config_hash: run.config_hash()?,
            core_version: edgefed_core::VERSION.to_string(),
            cli_version: env!("CARGO_PKG_VERSION").to_string(),
            files: hashes,
        };
        Ok(Self { run, provenance })
    }

    pub fn to_toml(&self) -> Result<String> {
        let prov = toml::to_string(&ProvenanceTable { provenance: &self.provenance })?;
        Ok(format!("{}\n{prov}", self.run.to_toml()?))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).context("manifest is not valid TOML")?;
        let prov = doc.remove("provenance").context("manifest lacks [provenance]")?;
        Ok(Self {
            run: ResolvedRun::deserialize(toml::Value::Table(doc)).context("invalid manifest body")?,
            provenance: Provenance::deserialize(prov).context("invalid [provenance]")?,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
    }

    /// Checks the stored config hash against the body.
    pub fn config_matches(&self) -> Result<bool> {
        Ok(self.run.config_hash()? == self.provenance.config_hash)
    }
}
