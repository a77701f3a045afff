use serde::{Deserialize, Serialize};

use super::{BufferPiece, GridPos, SimConfig, WorldState};
use crate::nn::Tensor;

/// Features per buffered piece: remaining bits, age, source index.
pub const PIECE_FEATURES: usize = 3;

/// Features per edge in the center state: position (2), col/exe occupancy (2),
/// per-piece ages of both buffers, in-flight age and last bandwidth share.
pub fn center_features_per_edge(cfg: &SimConfig) -> usize {
    2 + 2 + cfg.buf_col_cap + cfg.buf_exe_cap + 1 + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeObservation {
    /// `[2, r_obs, r_obs]`; channel 0 sums buffered bits, channel 1 sums packet delays.
    pub obs_map: Tensor,
    /// `PIECE_FEATURES` per slot, zero padded to `buf_col_cap`.
    pub col_state: Vec<f64>,
    pub exe_state: Vec<f64>,
    /// Occupied slots; pieces always fill the leading slots.
    pub col_len: usize,
    pub exe_len: usize,
    pub alloc_bandwidth: f64,
    pub position: GridPos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationBundle {
    pub edges: Vec<EdgeObservation>,
    /// Concatenation of per-edge status in edge index order.
    pub center: Vec<f64>,
}

fn piece_features(pieces: &[BufferPiece], cap: usize, clock: u64) -> Vec<f64> {
    let mut out = vec![0.0; cap * PIECE_FEATURES];
    for (slot, p) in pieces.iter().take(cap).enumerate() {
        let base = slot * PIECE_FEATURES;
        out[base] = p.remaining_bits;
        out[base + 1] = clock.saturating_sub(p.latest_gen) as f64;
        out[base + 2] = p.source_idx as f64;
    }
    out
}

fn piece_ages(pieces: &[BufferPiece], cap: usize, clock: u64) -> impl Iterator<Item = f64> + '_ {
    (0..cap).map(move |i| pieces.get(i).map_or(0.0, |p| clock.saturating_sub(p.latest_gen) as f64))
}

/// Pure function of the state: rasterised local views plus buffer summaries.
pub fn build_observations(state: &WorldState, cfg: &SimConfig) -> ObservationBundle {
    let side = cfg.r_obs;
    let half = (side / 2) as i64;
    let clock = state.clock;

    let edges = state
        .edges
        .iter()
        .map(|edge| {
            let mut map = vec![0.0; 2 * side * side];
            let (x0, y0) = (edge.position.x - half, edge.position.y - half);
            for src in &state.sources {
                let (i, j) = (src.position.x - x0, src.position.y - y0);
                if i < 0 || j < 0 || i >= side as i64 || j >= side as i64 || src.buffer.is_empty() {
                    continue;
                }
                let cell = i as usize * side + j as usize;
                for p in &src.buffer {
                    map[cell] += p.size_bits as f64;
                    map[side * side + cell] += clock.saturating_sub(p.gen_time) as f64;
                }
            }
            EdgeObservation {
                obs_map: Tensor::new(vec![2, side, side], map).expect("shape matches"),
                col_state: piece_features(&edge.col_buffer, cfg.buf_col_cap, clock),
                exe_state: piece_features(&edge.exe_buffer, cfg.buf_exe_cap, clock),
                col_len: edge.col_buffer.len(),
                exe_len: edge.exe_buffer.len(),
                alloc_bandwidth: edge.alloc_bandwidth,
                position: edge.position,
            }
        })
        .collect();

    let mut center = Vec::with_capacity(state.edges.len() * center_features_per_edge(cfg));
    for edge in &state.edges {
        center.push(edge.position.x as f64);
        center.push(edge.position.y as f64);
        center.push(edge.col_buffer.len() as f64);
        center.push(edge.exe_buffer.len() as f64);
        center.extend(piece_ages(&edge.col_buffer, cfg.buf_col_cap, clock));
        center.extend(piece_ages(&edge.exe_buffer, cfg.buf_exe_cap, clock));
        center.push(edge.in_flight.as_ref().map_or(0.0, |p| clock.saturating_sub(p.latest_gen) as f64));
        center.push(edge.alloc_bandwidth);
    }

    ObservationBundle { edges, center }
}
