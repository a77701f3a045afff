use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat, canonically ordered parameter vector of a network (or network group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn distance_sq(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// `keep * self + (1 - keep) * other`, elementwise.
    pub fn blend(&self, other: &ParamVector, keep: f64) -> Result<ParamVector> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| keep * a + (1.0 - keep) * b).collect(),
        ))
    }

    /// Writes a checkpoint: a header line with architecture hash and length,
    /// then one value per line in round-trip precision.
    pub fn write_file(&self, path: &Path, arch_hash: &str) -> Result<()> {
        let mut out = String::with_capacity(self.len() * 24 + 64);
        writeln!(out, "# arch={arch_hash},len={}", self.len()).expect("string write");
        for v in &self.0 {
            writeln!(out, "{v:e}").expect("string write");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a checkpoint, returning the stored architecture hash with the vector.
    pub fn read_file(path: &Path) -> Result<(String, ParamVector)> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty parameter file".into()))?;
        let body = header
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse(format!("bad header `{header}`")))?;
        let (mut arch, mut len) = (None, None);
        for kv in body.split(',') {
            match kv.split_once('=') {
                Some(("arch", v)) => arch = Some(v.to_string()),
                Some(("len", v)) => len = v.parse::<usize>().ok(),
                _ => return Err(Error::Parse(format!("bad header field `{kv}`"))),
            }
        }
        let (arch, len) = arch.zip(len).ok_or_else(|| Error::Parse("header needs arch and len".into()))?;
        let values = lines
            .map(|l| l.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{l}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                got: values.len(),
            });
        }
        Ok((arch, ParamVector(values)))
    }
}
