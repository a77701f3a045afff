//! Actor and critic roles for edge devices, the center controller and the
//! centralized baseline, plus state encoding and exploration.
//!
//! Actors emit softmax blocks ([`SoftActionSet`]); the environment receives
//! their argmax one-hots while critics and actor updates work on the soft
//! blocks so gradients can flow from the critic into the actor.

mod encode;
mod explore;
mod nets;

pub use encode::{
    centralized_state, center_state, edge_state, encode_center_action, encode_edge_action, AgentState,
};
pub use explore::{epsilon_select, random_center_action, random_edge_action, Explore};
pub use nets::{ActorNet, CriticNet, Model};

use serde::{Deserialize, Serialize};

use crate::env::{CenterAction, EdgeActionSet, SimConfig};
use crate::error::{Error, Result};

/// Network sizes shared by all roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            conv_channels: 4,
            conv_kernel: 3,
            hidden: 64,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self, sim: &SimConfig) -> Result<()> {
        if self.conv_channels == 0 {
            return Err(Error::config("conv_channels", "must be >= 1"));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::config("conv_kernel", "must be odd"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be >= 1"));
        }
        if sim.r_obs % sim.r_move != 0 {
            return Err(Error::config("r_obs", "must be a multiple of r_move for movement pooling"));
        }
        Ok(())
    }
}

/// Block sizes of every action type in a given system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionDims {
    pub move_cells: usize,
    pub b_col: usize,
    pub b_exe: usize,
    pub n_edges: usize,
}

impl ActionDims {
    pub fn new(cfg: &SimConfig) -> Self {
        Self {
            move_cells: cfg.move_cells(),
            b_col: cfg.buf_col_cap,
            b_exe: cfg.buf_exe_cap,
            n_edges: cfg.num_edges,
        }
    }

    pub fn edge_action_len(&self) -> usize {
        self.move_cells + self.b_col + self.b_exe
    }
}

/// Softmax outputs of an actor, one simplex per block.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftActionSet {
    pub blocks: Vec<Vec<f64>>,
}

impl SoftActionSet {
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.concat()
    }

    /// Splits a flat vector back into blocks shaped like `self`.
    pub fn split_like(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        let mut offset = 0;
        self.blocks
            .iter()
            .map(|b| {
                let part = flat[offset..offset + b.len()].to_vec();
                offset += b.len();
                part
            })
            .collect()
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Hard edge action from `[move, exe, off]` blocks.
pub fn decode_edge(blocks: &[Vec<f64>], dims: &ActionDims) -> EdgeActionSet {
    EdgeActionSet::from_indices(
        argmax(&blocks[0]),
        argmax(&blocks[1]),
        dims.b_col,
        argmax(&blocks[2]),
        dims.b_exe,
    )
}

/// Bandwidth shares straight from the softmax block, renormalised.
pub fn decode_center(block: &[f64]) -> CenterAction {
    let sum: f64 = block.iter().sum();
    CenterAction {
        bandwidth_props: block.iter().map(|v| v / sum).collect(),
    }
}

/// Forward pass of an edge actor: soft blocks for training, hard action for the world.
pub fn edge_act(actor: &ActorNet, state: &AgentState, dims: &ActionDims) -> Result<(SoftActionSet, EdgeActionSet)> {
    let soft = actor.predict(state)?;
    let hard = decode_edge(&soft.blocks, dims);
    Ok((soft, hard))
}

pub fn center_act(actor: &ActorNet, state: &AgentState) -> Result<(SoftActionSet, CenterAction)> {
    let soft = actor.predict(state)?;
    let hard = decode_center(&soft.blocks[0]);
    Ok((soft, hard))
}

/// Joint action of the centralized baseline: one edge action per device and the bandwidth split.
pub fn centralized_act(
    actor: &ActorNet,
    state: &AgentState,
    dims: &ActionDims,
) -> Result<(SoftActionSet, Vec<EdgeActionSet>, CenterAction)> {
    let soft = actor.predict(state)?;
    let (edges, center) = decode_centralized(&soft.blocks, dims);
    Ok((soft, edges, center))
}

pub fn decode_centralized(blocks: &[Vec<f64>], dims: &ActionDims) -> (Vec<EdgeActionSet>, CenterAction) {
    let edges = blocks[..3 * dims.n_edges].chunks(3).map(|b| decode_edge(b, dims)).collect();
    (edges, decode_center(&blocks[3 * dims.n_edges]))
}

/// Q estimate of a critic for a state and (soft) action.
pub fn critic_eval(critic: &CriticNet, state: &AgentState, action: &[f64]) -> Result<f64> {
    critic.evaluate(state, action)
}
