//! Air-to-ground channel: free-space loss with LoS/NLoS excess, elevation-angle
//! LoS probability and the Shannon rate over an allocated bandwidth share.

use super::{GridPos, SimConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkState {
    LoS,
    NLoS,
}

/// Ground (horizontal) distance in meters.
fn ground_distance_m(edge: GridPos, ground: GridPos, cfg: &SimConfig) -> f64 {
    let dx = (edge.x - ground.x) as f64;
    let dy = (edge.y - ground.y) as f64;
    dx.hypot(dy) * cfg.cell_size_m
}

/// Linear path loss `(4πf/c)^2 d^2 η` for the given link state.
pub fn path_loss(edge: GridPos, ground: GridPos, xi: LinkState, cfg: &SimConfig) -> Result<f64> {
    let horiz = ground_distance_m(edge, ground, cfg);
    let d_sq = horiz * horiz + cfg.height * cfg.height;
    if d_sq <= 0.0 {
        return Err(Error::DegenerateGeometry);
    }
    let k = 4.0 * std::f64::consts::PI * cfg.carrier_freq / cfg.light_speed;
    let eta = match xi {
        LinkState::LoS => cfg.eta_los,
        LinkState::NLoS => cfg.eta_nlos,
    };
    Ok(k * k * d_sq * eta)
}

/// Probability of a line-of-sight link from the elevation angle (degrees).
pub fn los_probability(edge: GridPos, ground: GridPos, cfg: &SimConfig) -> f64 {
    let horiz = ground_distance_m(edge, ground, cfg);
    los_probability_at_angle(elevation_deg(horiz, cfg.height), cfg.sigmoid_a, cfg.sigmoid_b)
}

pub fn elevation_deg(horizontal_m: f64, height_m: f64) -> f64 {
    if horizontal_m == 0.0 {
        90.0
    } else {
        (height_m / horizontal_m).atan().to_degrees()
    }
}

pub fn los_probability_at_angle(psi_deg: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * (-b * (psi_deg - a)).exp())
}

/// Expected loss over the LoS/NLoS mixture.
pub fn avg_path_loss(edge: GridPos, ground: GridPos, cfg: &SimConfig) -> Result<f64> {
    let p0 = los_probability(edge, ground, cfg);
    let los = path_loss(edge, ground, LinkState::LoS, cfg)?;
    let nlos = path_loss(edge, ground, LinkState::NLoS, cfg)?;
    Ok(p0 * los + (1.0 - p0) * nlos)
}

/// Shannon rate in bits per slot for a bandwidth share, transmit power and loss.
///
/// The noise term scales with the allocated bandwidth, so the SNR itself
/// depends on the share.
pub fn rate_for_loss(bandwidth_prop: f64, power: f64, avg_loss: f64, cfg: &SimConfig) -> f64 {
    if bandwidth_prop <= 0.0 || power <= 0.0 {
        return 0.0;
    }
    let bw = bandwidth_prop * cfg.total_bandwidth;
    let snr = power / (avg_loss * cfg.noise_psd * bw);
    bw * snr.ln_1p() / std::f64::consts::LN_2 * cfg.slot_duration
}

/// Edge-to-ground rate at maximum transmit power.
pub fn tx_rate(bandwidth_prop: f64, edge: GridPos, ground: GridPos, cfg: &SimConfig) -> Result<f64> {
    if bandwidth_prop <= 0.0 || cfg.p_tr_max <= 0.0 {
        return Ok(0.0);
    }
    let loss = avg_path_loss(edge, ground, cfg)?;
    Ok(rate_for_loss(bandwidth_prop, cfg.p_tr_max, loss, cfg))
}
