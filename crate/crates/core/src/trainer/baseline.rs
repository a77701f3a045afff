use std::str::FromStr;

use rand::Rng;

use super::{centralized_unit, is_scheduled, replay_update, stats_entry, MetricsLog, SlopeTracker, TrainConfig};
use crate::agents::{
    centralized_state, decode_centralized, encode_center_action, encode_edge_action, ActionDims, Explore, Model,
};
use crate::env::{grid_move_cell, BufferPiece, CenterAction, EdgeActionSet, SimConfig, World, WorldState};
use crate::error::{Error, Result};
use crate::replay::Experience;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Random,
    Greedy,
    Centralized,
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "greedy" => Ok(Self::Greedy),
            "centralized" => Ok(Self::Centralized),
            other => Err(Error::Parse(format!("unknown baseline `{other}` (random, greedy, centralized)"))),
        }
    }
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Greedy => "greedy",
            Self::Centralized => "centralized",
        }
    }
}

fn oldest(pieces: &[BufferPiece]) -> usize {
    pieces
        .iter()
        .enumerate()
        .min_by_key(|(i, p)| (p.latest_gen, *i))
        .map_or(0, |(i, _)| i)
}

/// Heuristic edge policy: head for the stalest nonempty source in view (or wait
/// at the stalest one when all are empty), keep working the oldest collected
/// piece and offload the oldest executed one. Moves randomly when no source is
/// in view.
pub fn greedy_edge_action<R: Rng + ?Sized>(state: &WorldState, k: usize, cfg: &SimConfig, rng: &mut R) -> EdgeActionSet {
    let edge = &state.edges[k];
    let half = (cfg.r_obs / 2) as i64;
    let busy: Vec<usize> = state
        .edges
        .iter()
        .filter(|e| e.index != k)
        .filter_map(|e| e.collect_session.as_ref().map(|s| s.source_idx))
        .collect();
    let in_view = |n: &usize| {
        let p = state.sources[*n].position;
        !busy.contains(n) && (p.x - edge.position.x).abs() <= half && (p.y - edge.position.y).abs() <= half
    };
    let stalest = |with_data: bool| {
        (0..state.sources.len())
            .filter(|n| in_view(n) && (!with_data || !state.sources[*n].buffer.is_empty()))
            .max_by_key(|&n| (state.age.ages[n], std::cmp::Reverse(n)))
    };
    let target = match &edge.collect_session {
        Some(s) => Some(s.source_idx),
        None => stalest(true).or_else(|| stalest(false)),
    };
    let m_half = (cfg.r_move / 2) as i64;
    let m_hi = cfg.r_move as i64 - 1 - m_half;
    let move_cell = match target {
        Some(n) => {
            let src = state.sources[n].position;
            let dx = (src.x - edge.position.x).clamp(-m_half, m_hi);
            let dy = (src.y - edge.position.y).clamp(-m_half, m_hi);
            grid_move_cell(((dx + m_half) * cfg.r_move as i64 + dy + m_half) as usize, cfg.r_move)
        }
        None => rng.random_range(0..cfg.move_cells()),
    };
    EdgeActionSet::from_indices(
        move_cell,
        oldest(&edge.col_buffer),
        cfg.buf_col_cap,
        oldest(&edge.exe_buffer),
        cfg.buf_exe_cap,
    )
}

/// Runs a non-federated comparison policy for `cfg.max_epochs` slots.
pub fn run_baseline(kind: BaselineKind, world: &mut World, cfg: &TrainConfig) -> Result<MetricsLog> {
    let sim = world.config().clone();
    let dims = ActionDims::new(&sim);
    let mut explore = stream(cfg.seed, Stream::Explore);
    match kind {
        BaselineKind::Random | BaselineKind::Greedy => {
            let mut log = MetricsLog::new(Vec::new(), sim.num_sources);
            for epoch in 1..=cfg.max_epochs {
                let edges: Vec<EdgeActionSet> = (0..sim.num_edges)
                    .map(|k| match kind {
                        BaselineKind::Random => EdgeActionSet::random(&dims, &mut explore),
                        _ => greedy_edge_action(world.state(), k, &sim, &mut explore),
                    })
                    .collect();
                let center = match kind {
                    BaselineKind::Random => CenterAction::random(&dims, &mut explore),
                    _ => CenterAction::uniform(sim.num_edges),
                };
                let outcome = world.step(&edges, &center)?;
                log.record(epoch, world.state(), &outcome.deliveries, Vec::new());
            }
            Ok(log)
        }
        BaselineKind::Centralized => run_centralized(world, cfg, &dims),
    }
}

fn run_centralized(world: &mut World, cfg: &TrainConfig, dims: &ActionDims) -> Result<MetricsLog> {
    let sim = world.config().clone();
    cfg.validate(sim.num_edges)?;
    let mut unit = centralized_unit(&sim, cfg)?;
    let mut explore = stream(cfg.seed, Stream::Explore);
    let mut replay_rng = stream(cfg.seed, Stream::Replay);
    let mut log = MetricsLog::new(vec!["central".into()], sim.num_sources);
    let mut slope = SlopeTracker::default();
    let mut state = centralized_state(&world.observe(), &sim);
    for epoch in 1..=cfg.max_epochs {
        let warm = unit.buffer.len() >= cfg.batch;
        let q: f64 = explore.random();
        let (edges, center) = if warm && q >= cfg.epsilon {
            decode_centralized(&unit.actor.predict(&state)?.blocks, dims)
        } else {
            (
                (0..sim.num_edges).map(|_| EdgeActionSet::random(dims, &mut explore)).collect(),
                CenterAction::random(dims, &mut explore),
            )
        };
        let outcome = world.step(&edges, &center)?;
        let next = centralized_state(&outcome.observations, &sim);
        let mut action: Vec<f64> = edges.iter().flat_map(|e| encode_edge_action(e, dims)).collect();
        action.extend(encode_center_action(&center));
        unit.buffer.push(Experience {
            state: std::mem::replace(&mut state, next.clone()),
            action,
            penalty: outcome.penalty,
            next_state: next,
        });
        let params = unit.actor.export_params();
        let stats = replay_update(&mut unit, cfg, &mut replay_rng)?.map(|s| {
            let l = slope.observe(params, s.actor_grad.clone());
            stats_entry(&s, l)
        });
        if is_scheduled(epoch, cfg.target_period) {
            unit.update_targets(cfg.tau)?;
        }
        log.record(epoch, world.state(), &outcome.deliveries, vec![stats]);
    }
    Ok(log)
}
