//! Discrete-time MEC world: sources, mobile edges, A2G channel, cloud and AoI.

pub mod channel;
mod config;
mod observe;
mod world;

pub use channel::{avg_path_loss, los_probability, path_loss, tx_rate, LinkState};
pub use config::{db_to_linear, SimConfig};
pub use observe::{build_observations, center_features_per_edge, EdgeObservation, ObservationBundle, PIECE_FEATURES};
pub use world::{
    advance_age, apply_movement, collect_step, decode_move, grid_move_cell, move_cell_grid, execute_step, generate_packets, offload_step,
    validate_bandwidth, AgeTracker, BufferPiece, CenterAction, CollectSession, Delivery, EdgeActionSet, EdgeDevice,
    GridPos, Packet, SourceNode, StepOutcome, World, WorldState,
};
