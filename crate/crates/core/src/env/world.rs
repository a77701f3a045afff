use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::channel;
use super::observe::{build_observations, ObservationBundle};
use super::SimConfig;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridPos {
    pub x: i64,
    pub y: i64,
}

impl GridPos {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: GridPos) -> f64 {
        ((self.x - other.x) as f64).hypot((self.y - other.y) as f64)
    }
}

/// One generated packet. Its elapsed time is `clock - gen_time`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub size_bits: u64,
    pub gen_time: u64,
    pub source_idx: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceNode {
    pub position: GridPos,
    /// Ordered by `gen_time`, oldest first.
    pub buffer: Vec<Packet>,
    pub lambda_bits: f64,
    pub p_gen: f64,
}

impl SourceNode {
    pub fn buffered_bits(&self) -> u64 {
        self.buffer.iter().map(|p| p.size_bits).sum()
    }
}

/// A collected batch of packets from one source, moving through execution and offload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferPiece {
    pub total_bits: u64,
    pub earliest_gen: u64,
    pub latest_gen: u64,
    pub source_idx: usize,
    /// Work left in the current stage (execution, then transmission).
    pub remaining_bits: f64,
}

impl BufferPiece {
    fn from_packets(packets: &[Packet]) -> Self {
        let total_bits = packets.iter().map(|p| p.size_bits).sum();
        let earliest_gen = packets.iter().map(|p| p.gen_time).min().unwrap_or(0);
        let latest_gen = packets.iter().map(|p| p.gen_time).max().unwrap_or(0);
        Self {
            total_bits,
            earliest_gen,
            latest_gen,
            source_idx: packets[0].source_idx,
            remaining_bits: total_bits as f64,
        }
    }
}

/// Rate-limited pull of one source's buffer. Bits stay in the source buffer
/// until the pull completes, so aborting leaves the source untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectSession {
    pub source_idx: usize,
    pub transferred_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDevice {
    pub index: usize,
    pub position: GridPos,
    pub col_buffer: Vec<BufferPiece>,
    pub exe_buffer: Vec<BufferPiece>,
    pub in_flight: Option<BufferPiece>,
    pub collect_session: Option<CollectSession>,
    pub alloc_bandwidth: f64,
}

impl EdgeDevice {
    pub fn new(index: usize, position: GridPos, n_edges: usize) -> Self {
        Self {
            index,
            position,
            col_buffer: Vec::new(),
            exe_buffer: Vec::new(),
            in_flight: None,
            collect_session: None,
            alloc_bandwidth: 1.0 / n_edges as f64,
        }
    }

    /// Data bits held on the device (collected, executed and in flight).
    pub fn held_bits(&self) -> u64 {
        self.col_buffer
            .iter()
            .chain(self.exe_buffer.iter())
            .chain(self.in_flight.iter())
            .map(|p| p.total_bits)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeTracker {
    pub last_gen_received: Vec<u64>,
    pub ages: Vec<u64>,
}

impl AgeTracker {
    pub fn new(num_sources: usize) -> Self {
        Self {
            last_gen_received: vec![0; num_sources],
            ages: vec![0; num_sources],
        }
    }

    pub fn average(&self) -> f64 {
        self.ages.iter().sum::<u64>() as f64 / self.ages.len() as f64
    }

    pub fn worst(&self) -> u64 {
        self.ages.iter().copied().max().unwrap_or(0)
    }
}

/// Per-edge decision for one slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeActionSet {
    pub move_cell: usize,
    pub exe_onehot: Vec<u8>,
    pub off_onehot: Vec<u8>,
}

impl EdgeActionSet {
    pub fn from_indices(move_cell: usize, exe: usize, b_col: usize, off: usize, b_exe: usize) -> Self {
        let mut exe_onehot = vec![0; b_col];
        exe_onehot[exe] = 1;
        let mut off_onehot = vec![0; b_exe];
        off_onehot[off] = 1;
        Self {
            move_cell,
            exe_onehot,
            off_onehot,
        }
    }

    /// Stay in place, work on and offload the oldest piece.
    pub fn idle(cfg: &SimConfig) -> Self {
        Self::from_indices(0, 0, cfg.buf_col_cap, 0, cfg.buf_exe_cap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterAction {
    pub bandwidth_props: Vec<f64>,
}

impl CenterAction {
    pub fn uniform(n_edges: usize) -> Self {
        Self {
            bandwidth_props: vec![1.0 / n_edges as f64; n_edges],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub edge: usize,
    pub source_idx: usize,
    pub bits: u64,
    pub latest_gen: u64,
}

/// Full mutable state of a world; cloning it is a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub clock: u64,
    pub sources: Vec<SourceNode>,
    pub edges: Vec<EdgeDevice>,
    pub age: AgeTracker,
    pub generated_bits: u64,
    pub delivered_bits: u64,
    pub delivered_pieces: u64,
    pub rng: ChaCha8Rng,
}

impl WorldState {
    /// Bits currently stored anywhere between the sources and the cloud.
    pub fn bits_in_system(&self) -> u64 {
        let at_sources: u64 = self.sources.iter().map(SourceNode::buffered_bits).sum();
        let at_edges: u64 = self.edges.iter().map(EdgeDevice::held_bits).sum();
        at_sources + at_edges
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observations: ObservationBundle,
    /// Shared penalty: the average age after this slot.
    pub penalty: f64,
    pub generated: Vec<Packet>,
    pub deliveries: Vec<Delivery>,
}

fn validate_onehot(v: &[u8], len: usize, agent: usize, what: &str) -> Result<usize> {
    if v.len() != len {
        return Err(Error::action(agent, format!("{what} has length {}, expected {len}", v.len())));
    }
    if v.iter().any(|&b| b > 1) {
        return Err(Error::action(agent, format!("{what} is not binary")));
    }
    match v.iter().filter(|&&b| b == 1).count() {
        1 => Ok(v.iter().position(|&b| b == 1).unwrap()),
        n => Err(Error::action(agent, format!("{what} sums to {n}, expected 1"))),
    }
}

/// Checks an N_e bandwidth split: nonnegative entries summing to 1 within 1e-9.
pub fn validate_bandwidth(props: &[f64], n_edges: usize) -> Result<()> {
    let agent = n_edges;
    if props.len() != n_edges {
        return Err(Error::action(agent, format!("bandwidth has length {}, expected {n_edges}", props.len())));
    }
    if props.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::action(agent, "bandwidth entries must be finite and >= 0"));
    }
    let sum: f64 = props.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::action(agent, format!("bandwidth sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Appends at most one packet per source; returns what was generated this slot.
pub fn generate_packets<R: Rng + ?Sized>(sources: &mut [SourceNode], clock: u64, rng: &mut R) -> Vec<Packet> {
    let mut out = Vec::new();
    for (idx, src) in sources.iter_mut().enumerate() {
        if !rng.random_bool(src.p_gen) {
            continue;
        }
        let dist = Poisson::new(src.lambda_bits).expect("lambda validated positive");
        let size_bits = loop {
            let draw: f64 = dist.sample(rng);
            if draw >= 1.0 {
                break draw as u64;
            }
        };
        let packet = Packet {
            size_bits,
            gen_time: clock,
            source_idx: idx,
        };
        src.buffer.push(packet.clone());
        out.push(packet);
    }
    out
}

/// Row-major position in the `r_move x r_move` grid of a movement cell.
///
/// Cell 0 is the zero displacement; the other cells follow in row-major
/// order, so a tie between all cells resolves to staying put.
pub fn move_cell_grid(move_cell: usize, r_move: usize) -> usize {
    let center = (r_move / 2) * r_move + r_move / 2;
    match move_cell {
        0 => center,
        c if c <= center => c - 1,
        c => c,
    }
}

/// Inverse of [`move_cell_grid`].
pub fn grid_move_cell(grid: usize, r_move: usize) -> usize {
    let center = (r_move / 2) * r_move + r_move / 2;
    match grid {
        g if g == center => 0,
        g if g < center => g + 1,
        g => g,
    }
}

/// Integer displacement for a movement cell, clipped radially to `r_move`.
pub fn decode_move(move_cell: usize, r_move: usize) -> Option<(i64, i64)> {
    if move_cell >= r_move * r_move {
        return None;
    }
    let grid = move_cell_grid(move_cell, r_move);
    let half = (r_move / 2) as i64;
    let mut dx = (grid / r_move) as i64 - half;
    let mut dy = (grid % r_move) as i64 - half;
    let limit = r_move as f64;
    let norm = (dx as f64).hypot(dy as f64);
    if norm > limit {
        let s = limit / norm;
        dx = (dx as f64 * s).round() as i64;
        dy = (dy as f64 * s).round() as i64;
        while (dx as f64).hypot(dy as f64) > limit {
            dx -= dx.signum();
            dy -= dy.signum();
        }
    }
    Some((dx, dy))
}

pub fn apply_movement(edge: &mut EdgeDevice, move_cell: usize, cfg: &SimConfig) -> Result<GridPos> {
    let (dx, dy) = decode_move(move_cell, cfg.r_move)
        .ok_or_else(|| Error::action(edge.index, format!("move cell {move_cell} out of range")))?;
    let x = (edge.position.x + dx).clamp(0, cfg.map_width as i64 - 1);
    let y = (edge.position.y + dy).clamp(0, cfg.map_height as i64 - 1);
    edge.position = GridPos::new(x, y);
    Ok(edge.position)
}

/// One slot of rate-limited collection. `busy[n]` marks sources already being
/// pulled by another edge. Returns bits moved this slot.
pub fn collect_step(edge: &mut EdgeDevice, sources: &mut [SourceNode], busy: &[bool], cfg: &SimConfig) -> f64 {
    if let Some(session) = &edge.collect_session {
        if edge.position.distance(sources[session.source_idx].position) > cfg.r_collect {
            edge.collect_session = None;
        }
    }
    if edge.collect_session.is_none() {
        if edge.col_buffer.len() >= cfg.buf_col_cap {
            return 0.0;
        }
        let mut best: Option<(f64, usize)> = None;
        for (idx, src) in sources.iter().enumerate() {
            if busy[idx] || src.buffer.is_empty() {
                continue;
            }
            let d = edge.position.distance(src.position);
            if d > cfg.r_collect {
                continue;
            }
            // strict < keeps the lowest index on ties
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, idx));
            }
        }
        match best {
            Some((_, idx)) => {
                edge.collect_session = Some(CollectSession {
                    source_idx: idx,
                    transferred_bits: 0.0,
                })
            }
            None => return 0.0,
        }
    }

    let session = edge.collect_session.as_mut().expect("session opened above");
    let src = &mut sources[session.source_idx];
    let buffered = src.buffered_bits() as f64;
    let amount = cfg.collect_rate.min(buffered - session.transferred_bits).max(0.0);
    session.transferred_bits += amount;
    if session.transferred_bits >= buffered {
        let packets = std::mem::take(&mut src.buffer);
        if !packets.is_empty() {
            edge.col_buffer.push(BufferPiece::from_packets(&packets));
        }
        edge.collect_session = None;
    }
    amount
}

/// Spends one slot of compute on the selected collected piece. Returns true when
/// a piece moved to the executed buffer.
pub fn execute_step(edge: &mut EdgeDevice, exe_onehot: &[u8], cfg: &SimConfig) -> Result<bool> {
    let slot = validate_onehot(exe_onehot, cfg.buf_col_cap, edge.index, "exe_onehot")?;
    let Some(piece) = edge.col_buffer.get_mut(slot) else {
        return Ok(false);
    };
    piece.remaining_bits = (piece.remaining_bits - cfg.compute_rate).max(0.0);
    if piece.remaining_bits > 0.0 || edge.exe_buffer.len() >= cfg.buf_exe_cap {
        return Ok(false);
    }
    let mut done = edge.col_buffer.remove(slot);
    done.remaining_bits = done.total_bits as f64;
    edge.exe_buffer.push(done);
    Ok(true)
}

/// Starts (if idle) and advances transmission of one executed piece. Delivery
/// refreshes the source's latest received generation time.
pub fn offload_step(
    edge: &mut EdgeDevice,
    off_onehot: &[u8],
    bandwidth_prop: f64,
    age: &mut AgeTracker,
    cfg: &SimConfig,
) -> Result<Option<Delivery>> {
    let slot = validate_onehot(off_onehot, cfg.buf_exe_cap, edge.index, "off_onehot")?;
    if !(0.0..=1.0).contains(&bandwidth_prop) {
        return Err(Error::action(edge.index, format!("bandwidth share {bandwidth_prop} outside [0,1]")));
    }
    edge.alloc_bandwidth = bandwidth_prop;
    if edge.in_flight.is_none() && slot < edge.exe_buffer.len() {
        edge.in_flight = Some(edge.exe_buffer.remove(slot));
    }
    let Some(piece) = edge.in_flight.as_mut() else {
        return Ok(None);
    };
    let rate = channel::tx_rate(bandwidth_prop, edge.position, cfg.cloud_position(), cfg)?;
    piece.remaining_bits = (piece.remaining_bits - rate).max(0.0);
    if piece.remaining_bits > 0.0 {
        return Ok(None);
    }
    let piece = edge.in_flight.take().expect("checked above");
    let latest = &mut age.last_gen_received[piece.source_idx];
    *latest = (*latest).max(piece.latest_gen);
    Ok(Some(Delivery {
        edge: edge.index,
        source_idx: piece.source_idx,
        bits: piece.total_bits,
        latest_gen: piece.latest_gen,
    }))
}

/// Refreshes every age for the given clock and returns their mean.
pub fn advance_age(age: &mut AgeTracker, clock: u64) -> f64 {
    for (a, &g) in age.ages.iter_mut().zip(&age.last_gen_received) {
        *a = clock.saturating_sub(g);
    }
    age.average()
}

/// A simulated MEC system: static configuration plus evolving state.
#[derive(Debug, Clone)]
pub struct World {
    cfg: SimConfig,
    state: WorldState,
}

impl World {
    /// Places sources and edges uniformly on the map using the env stream of `cfg.seed`.
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, Stream::Env);
        let place = |rng: &mut ChaCha8Rng| {
            GridPos::new(
                rng.random_range(0..cfg.map_width as i64),
                rng.random_range(0..cfg.map_height as i64),
            )
        };
        let sources = (0..cfg.num_sources)
            .map(|_| SourceNode {
                position: place(&mut rng),
                buffer: Vec::new(),
                lambda_bits: cfg.lambda_bits,
                p_gen: cfg.p_gen,
            })
            .collect();
        let edges = (0..cfg.num_edges)
            .map(|k| EdgeDevice::new(k, place(&mut rng), cfg.num_edges))
            .collect();
        let state = WorldState {
            clock: 0,
            sources,
            edges,
            age: AgeTracker::new(cfg.num_sources),
            generated_bits: 0,
            delivered_bits: 0,
            delivered_pieces: 0,
            rng,
        };
        Ok(Self { cfg, state })
    }

    pub fn from_state(cfg: SimConfig, state: WorldState) -> Result<Self> {
        cfg.validate()?;
        if state.sources.len() != cfg.num_sources || state.edges.len() != cfg.num_edges {
            return Err(Error::ShapeMismatch {
                expected: vec![cfg.num_sources, cfg.num_edges],
                got: vec![state.sources.len(), state.edges.len()],
            });
        }
        Ok(Self { cfg, state })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// Direct mutable access for scripted scenarios.
    pub fn state_mut(&mut self) -> &mut WorldState {
        &mut self.state
    }

    pub fn snapshot(&self) -> WorldState {
        self.state.clone()
    }

    pub fn observe(&self) -> ObservationBundle {
        build_observations(&self.state, &self.cfg)
    }

    fn validate_actions(&self, edge_actions: &[EdgeActionSet], center: &CenterAction) -> Result<()> {
        let n_e = self.cfg.num_edges;
        if edge_actions.len() != n_e {
            return Err(Error::action(
                edge_actions.len().min(n_e),
                format!("got {} edge actions, expected {n_e}", edge_actions.len()),
            ));
        }
        for (k, a) in edge_actions.iter().enumerate() {
            if a.move_cell >= self.cfg.move_cells() {
                return Err(Error::action(k, format!("move cell {} out of range", a.move_cell)));
            }
            validate_onehot(&a.exe_onehot, self.cfg.buf_col_cap, k, "exe_onehot")?;
            validate_onehot(&a.off_onehot, self.cfg.buf_exe_cap, k, "off_onehot")?;
        }
        validate_bandwidth(&center.bandwidth_props, n_e)
    }

    /// Advances one slot: generate, move, collect, execute, offload, tick, age.
    /// Actions are validated up front so a rejected step leaves the world untouched.
    pub fn step(&mut self, edge_actions: &[EdgeActionSet], center: &CenterAction) -> Result<StepOutcome> {
        self.validate_actions(edge_actions, center)?;
        let cfg = &self.cfg;
        let st = &mut self.state;

        let generated = generate_packets(&mut st.sources, st.clock, &mut st.rng);
        st.generated_bits += generated.iter().map(|p| p.size_bits).sum::<u64>();

        for (edge, act) in st.edges.iter_mut().zip(edge_actions) {
            apply_movement(edge, act.move_cell, cfg)?;
        }

        for k in 0..st.edges.len() {
            let mut busy = vec![false; st.sources.len()];
            for (j, other) in st.edges.iter().enumerate() {
                if j != k {
                    if let Some(s) = &other.collect_session {
                        busy[s.source_idx] = true;
                    }
                }
            }
            collect_step(&mut st.edges[k], &mut st.sources, &busy, cfg);
        }

        for (edge, act) in st.edges.iter_mut().zip(edge_actions) {
            execute_step(edge, &act.exe_onehot, cfg)?;
        }

        let mut deliveries = Vec::new();
        for (k, (edge, act)) in st.edges.iter_mut().zip(edge_actions).enumerate() {
            if let Some(d) = offload_step(edge, &act.off_onehot, center.bandwidth_props[k], &mut st.age, cfg)? {
                st.delivered_bits += d.bits;
                st.delivered_pieces += 1;
                deliveries.push(d);
            }
        }

        st.clock += 1;
        let penalty = advance_age(&mut st.age, st.clock);
        Ok(StepOutcome {
            observations: build_observations(st, cfg),
            penalty,
            generated,
            deliveries,
        })
    }
}
