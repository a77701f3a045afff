use serde::{Deserialize, Serialize};

use super::ActionDims;
use crate::env::{CenterAction, EdgeActionSet, EdgeObservation, ObservationBundle, SimConfig, PIECE_FEATURES};
use crate::nn::SparseTensor;

// Feature scales: bits in units of 10 Kb, ages in units of 100 slots.
const BITS_SCALE: f64 = 1e-4;
const AGE_SCALE: f64 = 1e-2;

/// Network-ready state of one agent: optional observation map plus flat features.
///
/// `masks[i]` lists the selectable entries of the actor's `i`-th trunk head;
/// a missing or empty mask leaves that head unrestricted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub map: Option<SparseTensor>,
    pub features: Vec<f64>,
    #[serde(default)]
    pub masks: Vec<Vec<bool>>,
}

impl AgentState {
    pub fn unmasked(map: Option<SparseTensor>, features: Vec<f64>) -> Self {
        Self { map, features, masks: Vec::new() }
    }

    pub fn mask(&self, head: usize) -> Option<&[bool]> {
        self.masks.get(head).map(Vec::as_slice).filter(|m| !m.is_empty())
    }
}

/// Marks the first `len` of `cap` slots; an empty buffer leaves every slot open.
fn occupancy(len: usize, cap: usize) -> Vec<bool> {
    if len == 0 {
        Vec::new()
    } else {
        (0..cap).map(|i| i < len).collect()
    }
}

fn scaled_pieces(raw: &[f64], n_sources: usize) -> impl Iterator<Item = f64> + '_ {
    raw.chunks_exact(PIECE_FEATURES).flat_map(move |p| {
        [p[0] * BITS_SCALE, p[1] * AGE_SCALE, p[2] / n_sources as f64]
    })
}

/// Length of the edge feature vector.
pub fn edge_feature_len(cfg: &SimConfig) -> usize {
    PIECE_FEATURES * (cfg.buf_col_cap + cfg.buf_exe_cap) + 3
}

pub fn edge_state(obs: &EdgeObservation, cfg: &SimConfig) -> AgentState {
    let mut map = obs.obs_map.clone();
    let plane = cfg.r_obs * cfg.r_obs;
    // Multiplying by the pooling area keeps a lone source at unit weight after average pooling.
    let area = ((cfg.r_obs / cfg.r_move) as f64).powi(2);
    for (i, v) in map.data_mut().iter_mut().enumerate() {
        if *v != 0.0 {
            let scale = if i < plane { BITS_SCALE } else { AGE_SCALE };
            *v = area * (*v * scale).ln_1p();
        }
    }
    let mut features = Vec::with_capacity(edge_feature_len(cfg));
    features.extend(scaled_pieces(&obs.col_state, cfg.num_sources));
    features.extend(scaled_pieces(&obs.exe_state, cfg.num_sources));
    features.push(obs.alloc_bandwidth);
    features.push(obs.position.x as f64 / cfg.map_width as f64);
    features.push(obs.position.y as f64 / cfg.map_height as f64);
    AgentState {
        map: Some(SparseTensor::from_dense(&map)),
        features,
        masks: vec![occupancy(obs.col_len, cfg.buf_col_cap), occupancy(obs.exe_len, cfg.buf_exe_cap)],
    }
}

pub fn center_state(bundle: &ObservationBundle, cfg: &SimConfig) -> AgentState {
    let per_edge = crate::env::center_features_per_edge(cfg);
    let features = bundle
        .center
        .chunks_exact(per_edge)
        .flat_map(|e| {
            let mut f = Vec::with_capacity(per_edge);
            f.push(e[0] / cfg.map_width as f64);
            f.push(e[1] / cfg.map_height as f64);
            f.push(e[2] / cfg.buf_col_cap as f64);
            f.push(e[3] / cfg.buf_exe_cap as f64);
            f.extend(e[4..per_edge - 1].iter().map(|a| a * AGE_SCALE));
            f.push(e[per_edge - 1]);
            f
        })
        .collect();
    AgentState::unmasked(None, features)
}

/// Global state for the centralized baseline: every edge's features and
/// movement-pooled map, then the center features.
pub fn centralized_state(bundle: &ObservationBundle, cfg: &SimConfig) -> AgentState {
    let k = cfg.r_obs / cfg.r_move;
    let mut features = Vec::new();
    let mut masks = Vec::new();
    for obs in &bundle.edges {
        let s = edge_state(obs, cfg);
        features.extend(s.features);
        features.extend(s.map.expect("edge state has a map").pooled(k));
        masks.push(Vec::new());
        masks.extend(s.masks);
    }
    features.extend(center_state(bundle, cfg).features);
    AgentState { map: None, features, masks }
}

pub fn centralized_state_len(cfg: &SimConfig) -> usize {
    cfg.num_edges * (edge_feature_len(cfg) + 2 * cfg.move_cells())
        + cfg.num_edges * crate::env::center_features_per_edge(cfg)
}

/// One-hot concatenation `[move, exe, off]` of an executed edge action.
pub fn encode_edge_action(a: &EdgeActionSet, dims: &ActionDims) -> Vec<f64> {
    let mut v = vec![0.0; dims.edge_action_len()];
    v[a.move_cell] = 1.0;
    for (i, &b) in a.exe_onehot.iter().enumerate() {
        v[dims.move_cells + i] = b as f64;
    }
    for (i, &b) in a.off_onehot.iter().enumerate() {
        v[dims.move_cells + dims.b_col + i] = b as f64;
    }
    v
}

pub fn encode_center_action(a: &CenterAction) -> Vec<f64> {
    a.bandwidth_props.clone()
}
