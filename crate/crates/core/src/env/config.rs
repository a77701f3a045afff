use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static parameters of one simulated MEC system.
///
/// Distances on the map are in grid cells; `cell_size_m` converts them to meters
/// for the channel equations only. Rates are per slot, `slot_duration` seconds long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub map_width: usize,
    pub map_height: usize,
    pub num_sources: usize,
    pub num_edges: usize,
    pub slot_duration: f64,
    pub seed: u64,

    /// Mean packet size in bits (Poisson mean).
    pub lambda_bits: f64,
    /// Per-slot arrival probability at each source.
    pub p_gen: f64,

    /// Side of the movement decision grid (cells per axis).
    pub r_move: usize,
    /// Side of the square observation window centred on the edge.
    pub r_obs: usize,
    /// Ground radius within which a source can be collected.
    pub r_collect: f64,
    /// Fixed flight altitude in meters.
    pub height: f64,
    pub buf_col_cap: usize,
    pub buf_exe_cap: usize,
    /// Edge execution rate, bits per slot.
    pub compute_rate: f64,
    /// Source-to-edge collection rate, bits per slot.
    pub collect_rate: f64,

    /// Total offloading bandwidth in Hz.
    pub total_bandwidth: f64,
    pub carrier_freq: f64,
    pub light_speed: f64,
    pub sigmoid_a: f64,
    pub sigmoid_b: f64,
    pub eta_los: f64,
    pub eta_nlos: f64,
    /// Noise power spectral density, linear W/Hz.
    pub noise_psd: f64,
    pub p_tr_max: f64,
    pub cell_size_m: f64,
}

impl Default for SimConfig {
    /// Table-style defaults for a 4-edge, 30-source system on a 200x200 map.
    fn default() -> Self {
        Self {
            map_width: 200,
            map_height: 200,
            num_sources: 30,
            num_edges: 4,
            slot_duration: 1.0,
            seed: 0,
            lambda_bits: 1000.0,
            p_gen: 0.3,
            r_move: 6,
            r_obs: 60,
            r_collect: 40.0,
            height: 10.0,
            buf_col_cap: 5,
            buf_exe_cap: 5,
            compute_rate: 20_000.0,
            collect_rate: 8_000.0,
            total_bandwidth: 100e6,
            carrier_freq: 2.5e9,
            light_speed: 3e8,
            sigmoid_a: 9.61,
            sigmoid_b: 0.16,
            eta_los: 1.0,
            eta_nlos: 20.0,
            noise_psd: db_to_linear(-130.0),
            p_tr_max: 0.2,
            cell_size_m: 1.0,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be > 0, got {v}")))
    }
}

fn at_least_one(field: &'static str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::config(field, "must be >= 1"))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        at_least_one("map_width", self.map_width)?;
        at_least_one("map_height", self.map_height)?;
        at_least_one("num_sources", self.num_sources)?;
        at_least_one("num_edges", self.num_edges)?;
        positive("slot_duration", self.slot_duration)?;
        positive("lambda_bits", self.lambda_bits)?;
        if !(0.0..=1.0).contains(&self.p_gen) {
            return Err(Error::config("p_gen", format!("must lie in [0,1], got {}", self.p_gen)));
        }
        at_least_one("r_move", self.r_move)?;
        at_least_one("r_obs", self.r_obs)?;
        positive("r_collect", self.r_collect)?;
        if self.r_collect > self.r_obs as f64 {
            return Err(Error::config("r_collect", "must not exceed r_obs"));
        }
        positive("height", self.height)?;
        at_least_one("buf_col_cap", self.buf_col_cap)?;
        at_least_one("buf_exe_cap", self.buf_exe_cap)?;
        positive("compute_rate", self.compute_rate)?;
        positive("collect_rate", self.collect_rate)?;
        positive("total_bandwidth", self.total_bandwidth)?;
        positive("carrier_freq", self.carrier_freq)?;
        positive("light_speed", self.light_speed)?;
        positive("sigmoid_a", self.sigmoid_a)?;
        positive("sigmoid_b", self.sigmoid_b)?;
        positive("eta_los", self.eta_los)?;
        positive("eta_nlos", self.eta_nlos)?;
        if self.eta_los > self.eta_nlos {
            return Err(Error::config("eta_los", "must not exceed eta_nlos"));
        }
        positive("noise_psd", self.noise_psd)?;
        if !(self.p_tr_max.is_finite() && self.p_tr_max >= 0.0) {
            return Err(Error::config("p_tr_max", "must be >= 0"));
        }
        positive("cell_size_m", self.cell_size_m)?;
        Ok(())
    }

    /// Number of cells in the movement decision grid.
    pub fn move_cells(&self) -> usize {
        self.r_move * self.r_move
    }

    /// Ground position of the cloud center: the middle of the map.
    pub fn cloud_position(&self) -> super::GridPos {
        super::GridPos::new((self.map_width / 2) as i64, (self.map_height / 2) as i64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn noise_default_is_minus_130_db() {
        assert!((SimConfig::default().noise_psd - 1e-13).abs() < 1e-25);
    }

    #[test]
    fn rejects_each_invariant_with_field_name() {
        let cases: Vec<(&str, Box<dyn Fn(&mut SimConfig)>)> = vec![
            ("num_sources", Box::new(|c| c.num_sources = 0)),
            ("num_edges", Box::new(|c| c.num_edges = 0)),
            ("p_gen", Box::new(|c| c.p_gen = 1.5)),
            ("r_collect", Box::new(|c| c.r_collect = 100.0)),
            ("r_collect", Box::new(|c| c.r_collect = 0.0)),
            ("buf_col_cap", Box::new(|c| c.buf_col_cap = 0)),
            ("compute_rate", Box::new(|c| c.compute_rate = -1.0)),
            ("eta_los", Box::new(|c| c.eta_los = 50.0)),
        ];
        for (field, mutate) in cases {
            let mut cfg = SimConfig::default();
            mutate(&mut cfg);
            match cfg.validate() {
                Err(Error::InvalidConfig { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected error on {field}, got {other:?}"),
            }
        }
    }
}
