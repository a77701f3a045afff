use std::fmt::Write as _;
use std::path::Path;

use crate::env::{Delivery, WorldState};
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const AGES_FILE: &str = "ages.csv";
pub const DELIVERIES_FILE: &str = "deliveries.csv";

const STAT_COLUMNS: [&str; 5] = ["actor_loss", "critic_loss", "grad_norm_sq", "grad_var", "lipschitz"];

/// Training statistics of one agent in one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub grad_norm_sq: f64,
    pub grad_var: f64,
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub avg_age: f64,
    pub worst_age: u64,
    /// Cumulative bits received by the cloud.
    pub delivered_bits: u64,
    pub delivered_pieces: u64,
    /// `None` for agents that did not train this epoch.
    pub agents: Vec<Option<AgentStats>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryEvent {
    pub epoch: u64,
    pub edge: usize,
    pub source: usize,
    pub bits: u64,
    pub latest_gen: u64,
}

/// Per-epoch record of a run, plus per-source ages and the delivery log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub agent_names: Vec<String>,
    pub num_sources: usize,
    pub records: Vec<EpochRecord>,
    pub source_ages: Vec<Vec<u64>>,
    pub deliveries: Vec<DeliveryEvent>,
}

impl MetricsLog {
    pub fn new(agent_names: Vec<String>, num_sources: usize) -> Self {
        Self {
            agent_names,
            num_sources,
            records: Vec::new(),
            source_ages: Vec::new(),
            deliveries: Vec::new(),
        }
    }

    pub fn record(&mut self, epoch: u64, state: &WorldState, deliveries: &[Delivery], agents: Vec<Option<AgentStats>>) {
        self.records.push(EpochRecord {
            epoch,
            avg_age: state.age.average(),
            worst_age: state.age.worst(),
            delivered_bits: state.delivered_bits,
            delivered_pieces: state.delivered_pieces,
            agents,
        });
        self.source_ages.push(state.age.ages.clone());
        self.deliveries.extend(deliveries.iter().map(|d| DeliveryEvent {
            epoch,
            edge: d.edge,
            source: d.source_idx,
            bits: d.bits,
            latest_gen: d.latest_gen,
        }));
    }

    pub fn avg_ages(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.avg_age).collect()
    }

    /// Mean of the last `window` average ages.
    pub fn trailing_mean(&self, window: usize) -> Option<f64> {
        let n = self.records.len();
        if n == 0 {
            return None;
        }
        let w = window.min(n);
        Some(self.records[n - w..].iter().map(|r| r.avg_age).sum::<f64>() / w as f64)
    }

    /// `grad_norm_sq` per epoch for the agents whose name starts with `prefix`,
    /// with missing entries as `None`.
    pub fn grad_norms(&self, prefix: &str) -> Vec<Vec<Option<f64>>> {
        let idx: Vec<usize> = (0..self.agent_names.len()).filter(|&i| self.agent_names[i].starts_with(prefix)).collect();
        self.records
            .iter()
            .map(|r| idx.iter().map(|&i| r.agents[i].map(|s| s.grad_norm_sq)).collect())
            .collect()
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,avg_age,worst_age,delivered_bits,delivered_pieces");
        for name in &self.agent_names {
            for col in STAT_COLUMNS {
                write!(out, ",{name}_{col}").unwrap();
            }
        }
        out.push('\n');
        for r in &self.records {
            write!(out, "{},{},{},{},{}", r.epoch, r.avg_age, r.worst_age, r.delivered_bits, r.delivered_pieces).unwrap();
            for a in &r.agents {
                match a {
                    Some(s) => {
                        write!(out, ",{},{},{},{},", s.actor_loss, s.critic_loss, s.grad_norm_sq, s.grad_var).unwrap();
                        if let Some(l) = s.lipschitz {
                            write!(out, "{l}").unwrap();
                        }
                    }
                    None => out.push_str(",,,,,"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn ages_csv(&self) -> String {
        let mut out = String::from("epoch");
        for n in 0..self.num_sources {
            write!(out, ",age_{n}").unwrap();
        }
        out.push('\n');
        for (r, ages) in self.records.iter().zip(&self.source_ages) {
            write!(out, "{}", r.epoch).unwrap();
            for a in ages {
                write!(out, ",{a}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn deliveries_csv(&self) -> String {
        let mut out = String::from("epoch,edge,source,bits,latest_gen\n");
        for d in &self.deliveries {
            writeln!(out, "{},{},{},{},{}", d.epoch, d.edge, d.source, d.bits, d.latest_gen).unwrap();
        }
        out
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(METRICS_FILE), self.metrics_csv())?;
        std::fs::write(dir.join(AGES_FILE), self.ages_csv())?;
        std::fs::write(dir.join(DELIVERIES_FILE), self.deliveries_csv())?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut log = Self::parse_metrics(&std::fs::read_to_string(dir.join(METRICS_FILE))?)?;
        let ages = std::fs::read_to_string(dir.join(AGES_FILE))?;
        let mut lines = ages.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty ages file".into()))?;
        log.num_sources = header.split(',').count() - 1;
        log.source_ages = lines
            .map(|l| l.split(',').skip(1).map(parse_field).collect::<Result<Vec<u64>>>())
            .collect::<Result<_>>()?;
        let deliveries = std::fs::read_to_string(dir.join(DELIVERIES_FILE))?;
        log.deliveries = deliveries
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 5 {
                    return Err(Error::Parse(format!("delivery row `{l}`")));
                }
                Ok(DeliveryEvent {
                    epoch: parse_field(f[0])?,
                    edge: parse_field(f[1])?,
                    source: parse_field(f[2])?,
                    bits: parse_field(f[3])?,
                    latest_gen: parse_field(f[4])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(log)
    }

    /// Parses a metrics CSV; ages and deliveries are left empty.
    pub fn parse_metrics(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::Parse("empty metrics file".into()))?.split(',').collect();
        if header.len() < 5 || (header.len() - 5) % STAT_COLUMNS.len() != 0 {
            return Err(Error::Parse(format!("unexpected metrics header with {} columns", header.len())));
        }
        let agent_names: Vec<String> = header[5..]
            .chunks(STAT_COLUMNS.len())
            .map(|c| c[0].trim_end_matches("_actor_loss").to_string())
            .collect();
        let mut records = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(Error::Parse(format!("row has {} fields, header {}", f.len(), header.len())));
            }
            let agents = f[5..]
                .chunks(STAT_COLUMNS.len())
                .map(|c| {
                    if c[0].is_empty() {
                        return Ok(None);
                    }
                    Ok(Some(AgentStats {
                        actor_loss: parse_field(c[0])?,
                        critic_loss: parse_field(c[1])?,
                        grad_norm_sq: parse_field(c[2])?,
                        grad_var: parse_field(c[3])?,
                        lipschitz: if c[4].is_empty() { None } else { Some(parse_field(c[4])?) },
                    }))
                })
                .collect::<Result<_>>()?;
            records.push(EpochRecord {
                epoch: parse_field(f[0])?,
                avg_age: parse_field(f[1])?,
                worst_age: parse_field(f[2])?,
                delivered_bits: parse_field(f[3])?,
                delivered_pieces: parse_field(f[4])?,
                agents,
            });
        }
        Ok(Self::new(agent_names, 0)).map(|mut l| {
            l.records = records;
            l
        })
    }
}

fn parse_field<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse(format!("bad field `{s}`")))
}
