//! Training orchestration: replay updates, soft target tracking, federated
//! averaging of edge actors, the online loop and baseline policies.

mod baseline;
mod log;

pub use baseline::{greedy_edge_action, run_baseline, BaselineKind};
pub use log::{AgentStats, DeliveryEvent, EpochRecord, MetricsLog};

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    center_state, decode_center, decode_edge, edge_state, encode_center_action, encode_edge_action,
    ActionDims, ActorNet, AgentState, ArchConfig, CriticNet, Explore, Model,
};
use crate::env::{CenterAction, EdgeActionSet, ObservationBundle, SimConfig, World};
use crate::error::{Error, Result};
use crate::nn::{ParamVector, SgdConfig};
use crate::replay::{Experience, ExperienceBuffer, DEFAULT_CAPACITY};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub target_period: u64,
    pub fed_period: u64,
    pub omega: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch: usize,
    pub max_epochs: u64,
    pub penalty_scale: f64,
    /// Largest gradient norm applied in one update of any network; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    pub buffer_capacity: usize,
    /// Also mix edge critics in the federated step.
    pub federate_critics: bool,
    /// Write parameter checkpoints every this many epochs; 0 disables.
    pub checkpoint_every: u64,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.85,
            tau: 0.8,
            epsilon: 0.2,
            target_period: 8,
            fed_period: 8,
            omega: 0.5,
            lr_actor: 1e-3,
            lr_critic: 2e-3,
            batch: 128,
            max_epochs: 3000,
            penalty_scale: 100.0,
            grad_clip: 1.0,
            seed: 0,
            buffer_capacity: DEFAULT_CAPACITY,
            federate_critics: false,
            checkpoint_every: 0,
            arch: ArchConfig::default(),
        }
    }
}

fn unit_interval(field: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(field, format!("must lie in [0,1], got {v}")))
    }
}

impl TrainConfig {
    pub fn validate(&self, n_edges: usize) -> Result<()> {
        unit_interval("gamma", self.gamma)?;
        unit_interval("tau", self.tau)?;
        unit_interval("epsilon", self.epsilon)?;
        if self.target_period == 0 {
            return Err(Error::config("target_period", "must be >= 1"));
        }
        if self.fed_period == 0 {
            return Err(Error::config("fed_period", "must be >= 1"));
        }
        validate_omega(self.omega, n_edges)?;
        SgdConfig::new(self.lr_actor).map_err(|_| Error::config("lr_actor", "must be > 0"))?;
        SgdConfig::new(self.lr_critic).map_err(|_| Error::config("lr_critic", "must be > 0"))?;
        if self.batch == 0 {
            return Err(Error::config("batch", "must be >= 1"));
        }
        if self.buffer_capacity < self.batch {
            return Err(Error::config("buffer_capacity", "must be >= batch"));
        }
        if !(self.penalty_scale.is_finite() && self.penalty_scale > 0.0) {
            return Err(Error::config("penalty_scale", "must be > 0"));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(Error::config("grad_clip", "must be >= 0"));
        }
        Ok(())
    }
}

/// Accepts `omega` in `[1/n_e, 1]`, allowing for rounding at the lower end.
pub fn validate_omega(omega: f64, n_edges: usize) -> Result<()> {
    let lo = 1.0 / n_edges.max(1) as f64;
    if !(omega.is_finite() && omega >= lo - 1e-12 && omega <= 1.0) {
        return Err(Error::config("omega", format!("must lie in [1/N_e, 1] = [{lo}, 1], got {omega}")));
    }
    Ok(())
}

/// True on epochs 1, 1 + period, 1 + 2 period, ...
pub fn is_scheduled(epoch: u64, period: u64) -> bool {
    epoch >= 1 && (epoch - 1) % period == 0
}

/// Mixing matrix with `omega` on the diagonal and the remainder spread evenly.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedUpdater {
    n_edges: usize,
    omega: f64,
}

impl FederatedUpdater {
    pub fn new(n_edges: usize, omega: f64) -> Result<Self> {
        if n_edges < 2 {
            return Err(Error::config("num_edges", "federated mixing needs at least 2 edges"));
        }
        validate_omega(omega, n_edges)?;
        Ok(Self { n_edges, omega })
    }

    pub fn off_diagonal(&self) -> f64 {
        (1.0 - self.omega) / (self.n_edges - 1) as f64
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n_edges)
            .map(|i| {
                (0..self.n_edges)
                    .map(|j| if i == j { self.omega } else { self.off_diagonal() })
                    .collect()
            })
            .collect()
    }

    pub fn apply(&self, params: &[ParamVector]) -> Result<Vec<ParamVector>> {
        if params.len() != self.n_edges {
            return Err(Error::LengthMismatch { expected: self.n_edges, got: params.len() });
        }
        let len = params[0].len();
        if let Some(bad) = params.iter().find(|p| p.len() != len) {
            return Err(Error::LengthMismatch { expected: len, got: bad.len() });
        }
        let c = self.off_diagonal();
        let mut sum = vec![0.0; len];
        for p in params {
            for (s, v) in sum.iter_mut().zip(&p.0) {
                *s += v;
            }
        }
        Ok(params
            .iter()
            .map(|p| ParamVector(p.0.iter().zip(&sum).map(|(v, s)| (self.omega - c) * v + c * s).collect()))
            .collect())
    }
}

/// `new_k = omega * theta_k + (1 - omega)/(N_e - 1) * sum_{j != k} theta_j`.
pub fn federated_update(params: &[ParamVector], omega: f64) -> Result<Vec<ParamVector>> {
    FederatedUpdater::new(params.len(), omega)?.apply(params)
}

/// `target <- tau * target + (1 - tau) * online`.
pub fn target_update<M: Model>(target: &mut M, online: &M, tau: f64) -> Result<()> {
    let mixed = target.export_params().blend(&online.export_params(), tau)?;
    target.import_params(&mixed)
}

/// Actor, critic, their targets and the agent's replay buffer.
#[derive(Debug, Clone)]
pub struct AgentUnit {
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub target_actor: ActorNet,
    pub target_critic: CriticNet,
    pub buffer: ExperienceBuffer,
}

impl AgentUnit {
    pub fn new(actor: ActorNet, critic: CriticNet, capacity: usize) -> Result<Self> {
        Ok(Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            buffer: ExperienceBuffer::new(capacity)?,
        })
    }

    pub fn update_targets(&mut self, tau: f64) -> Result<()> {
        target_update(&mut self.target_actor, &self.actor, tau)?;
        target_update(&mut self.target_critic, &self.critic, tau)
    }

    fn write_checkpoint(&self, dir: &Path, name: &str) -> Result<()> {
        self.actor
            .export_params()
            .write_file(&dir.join(format!("{name}_actor.params")), &self.actor.arch_hash())?;
        self.critic
            .export_params()
            .write_file(&dir.join(format!("{name}_critic.params")), &self.critic.arch_hash())
    }
}

/// Batch statistics of one replay update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    /// Squared norm of the mean actor gradient.
    pub grad_norm_sq: f64,
    /// Mean squared deviation of per-sample actor gradients from their mean.
    pub grad_var: f64,
    /// Mean actor gradient, kept for trajectory smoothness estimates.
    pub actor_grad: ParamVector,
}

/// Critic regression towards `penalty / scale + gamma * Q'(s', A'(s'))`, returns the batch MSE.
pub fn critic_step(
    critic: &mut CriticNet,
    target_actor: &ActorNet,
    target_critic: &CriticNet,
    batch: &[&Experience],
    cfg: &TrainConfig,
) -> Result<f64> {
    let n = batch.len() as f64;
    critic.zero_grad();
    let mut loss = 0.0;
    for e in batch {
        let bootstrap = if cfg.gamma == 0.0 {
            0.0
        } else {
            let next_action = target_actor.predict(&e.next_state)?.flatten();
            target_critic.evaluate(&e.next_state, &next_action)?
        };
        let y = e.penalty / cfg.penalty_scale + cfg.gamma * bootstrap;
        let q = critic.forward(&e.state, &e.action)?;
        loss += (q - y).powi(2) / n;
        critic.backward(2.0 * (q - y) / n)?;
    }
    critic.clip_grad_norm(cfg.grad_clip);
    critic.sgd_step(&SgdConfig { learning_rate: cfg.lr_critic });
    Ok(loss)
}

/// One actor step minimising the mean of `q_and_grad(s, A(s))` over `states`.
///
/// `q_and_grad` returns the critic value and its gradient with respect to the
/// flattened soft action; the critic itself is not modified.
pub fn actor_step<F>(
    actor: &mut ActorNet,
    states: &[&AgentState],
    lr: f64,
    grad_clip: f64,
    mut q_and_grad: F,
) -> Result<UpdateStats>
where
    F: FnMut(&AgentState, &[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = states.len() as f64;
    actor.zero_grad();
    let mut loss = 0.0;
    let mut prev = ParamVector::zeros(actor.param_count());
    let mut cum = prev.clone();
    let mut sample_sq = 0.0;
    for s in states {
        let soft = actor.forward(s)?;
        let (q, dq) = q_and_grad(s, &soft.flatten())?;
        loss += q / n;
        let scaled: Vec<f64> = dq.iter().map(|g| g / n).collect();
        actor.backward(&soft.split_like(&scaled))?;
        actor.copy_grads_into(&mut cum.0);
        // Per-sample gradient is n times the increment of the running mean.
        sample_sq += cum.0.iter().zip(&prev.0).map(|(c, p)| ((c - p) * n).powi(2)).sum::<f64>() / n;
        std::mem::swap(&mut prev, &mut cum);
    }
    let grad_norm_sq = prev.norm_sq();
    actor.clip_grad_norm(grad_clip);
    actor.sgd_step(&SgdConfig { learning_rate: lr });
    Ok(UpdateStats {
        actor_loss: loss,
        critic_loss: 0.0,
        grad_norm_sq,
        grad_var: (sample_sq - grad_norm_sq).max(0.0),
        actor_grad: prev,
    })
}

/// Samples a batch and performs one critic step then one actor step.
/// Returns `None` while the buffer holds fewer than `batch` experiences.
pub fn replay_update(unit: &mut AgentUnit, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Option<UpdateStats>> {
    let AgentUnit { actor, critic, target_actor, target_critic, buffer } = unit;
    let batch = match buffer.sample(cfg.batch, rng) {
        Ok(b) => b,
        Err(Error::InsufficientData { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let critic_loss = critic_step(critic, target_actor, target_critic, &batch, cfg)?;
    let states: Vec<&AgentState> = batch.iter().map(|e| &e.state).collect();
    let frozen = &*critic;
    let mut stats = actor_step(actor, &states, cfg.lr_actor, cfg.grad_clip, |s, a| frozen.action_gradient(s, a))?;
    stats.critic_loss = critic_loss;
    Ok(Some(stats))
}

/// All learning agents of the hierarchical system.
#[derive(Debug, Clone)]
pub struct AgentEnsemble {
    pub edges: Vec<AgentUnit>,
    pub center: AgentUnit,
}

impl AgentEnsemble {
    /// Fresh networks drawn from the init stream of `cfg.seed`.
    pub fn new(sim: &SimConfig, cfg: &TrainConfig) -> Result<Self> {
        sim.validate()?;
        cfg.validate(sim.num_edges)?;
        cfg.arch.validate(sim)?;
        let mut rng = stream(cfg.seed, Stream::Init);
        // Edges start from one shared draw so federated averaging mixes aligned units.
        let actor = ActorNet::edge(sim, &cfg.arch, &mut rng)?;
        let critic = CriticNet::edge(sim, &cfg.arch, &mut rng)?;
        let edges = (0..sim.num_edges)
            .map(|_| AgentUnit::new(actor.clone(), critic.clone(), cfg.buffer_capacity))
            .collect::<Result<Vec<_>>>()?;
        let center = AgentUnit::new(
            ActorNet::center(sim, &cfg.arch, &mut rng)?,
            CriticNet::center(sim, &cfg.arch, &mut rng)?,
            cfg.buffer_capacity,
        )?;
        Ok(Self { edges, center })
    }

    pub fn agent_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.edges.len()).map(|k| format!("edge{k}")).collect();
        names.push("center".into());
        names
    }

    fn units_mut(&mut self) -> impl Iterator<Item = &mut AgentUnit> {
        self.edges.iter_mut().chain(std::iter::once(&mut self.center))
    }

    /// Mixes edge actors (and optionally edge critics) with the federated matrix.
    pub fn federate(&mut self, omega: f64, include_critics: bool) -> Result<()> {
        if self.edges.len() < 2 {
            return Ok(());
        }
        let actors: Vec<ParamVector> = self.edges.iter().map(|u| u.actor.export_params()).collect();
        for (u, p) in self.edges.iter_mut().zip(federated_update(&actors, omega)?) {
            u.actor.import_params(&p)?;
        }
        if include_critics {
            let critics: Vec<ParamVector> = self.edges.iter().map(|u| u.critic.export_params()).collect();
            for (u, p) in self.edges.iter_mut().zip(federated_update(&critics, omega)?) {
                u.critic.import_params(&p)?;
            }
        }
        Ok(())
    }

    pub fn write_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, u) in self.edges.iter().enumerate() {
            u.write_checkpoint(dir, &format!("edge{k}"))?;
        }
        self.center.write_checkpoint(dir, "center")
    }
}

/// Greedy (actor) joint action for the current observations.
pub fn greedy_actions(
    ensemble: &AgentEnsemble,
    edge_states: &[AgentState],
    center: &AgentState,
    dims: &ActionDims,
) -> Result<(Vec<EdgeActionSet>, CenterAction)> {
    let edges = ensemble
        .edges
        .iter()
        .zip(edge_states)
        .map(|(u, s)| Ok(decode_edge(&u.actor.predict(s)?.blocks, dims)))
        .collect::<Result<Vec<_>>>()?;
    let center = decode_center(&ensemble.center.actor.predict(center)?.blocks[0]);
    Ok((edges, center))
}

fn encode_states(bundle: &ObservationBundle, sim: &SimConfig) -> (Vec<AgentState>, AgentState) {
    let edges = bundle.edges.iter().map(|o| edge_state(o, sim)).collect();
    (edges, center_state(bundle, sim))
}

/// Running smoothness estimate `|g_t - g_s| / |theta_t - theta_s|` between consecutive updates.
#[derive(Debug, Default, Clone)]
struct SlopeTracker {
    last: Option<(ParamVector, ParamVector)>,
}

impl SlopeTracker {
    fn observe(&mut self, params: ParamVector, grad: ParamVector) -> Option<f64> {
        let slope = self.last.as_ref().and_then(|(p, g)| {
            let dp = params.distance_sq(p).sqrt();
            (dp > 0.0).then(|| grad.distance_sq(g).sqrt() / dp)
        });
        self.last = Some((params, grad));
        slope
    }
}

fn stats_entry(stats: &UpdateStats, slope: Option<f64>) -> AgentStats {
    AgentStats {
        actor_loss: stats.actor_loss,
        critic_loss: stats.critic_loss,
        grad_norm_sq: stats.grad_norm_sq,
        grad_var: stats.grad_var,
        lipschitz: slope,
    }
}

/// Online collaborative training of the edge and center agents.
///
/// Each epoch: exploration-aware action selection for every agent, one world
/// slot, experience push, replay updates, then the scheduled target and
/// federated steps. Checkpoints go to `checkpoint_dir/epoch_<t>` when enabled.
pub fn train_loop(
    world: &mut World,
    ensemble: &mut AgentEnsemble,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<MetricsLog> {
    let sim = world.config().clone();
    cfg.validate(sim.num_edges)?;
    let dims = ActionDims::new(&sim);
    let mut explore = stream(cfg.seed, Stream::Explore);
    let mut replay_rng = stream(cfg.seed, Stream::Replay);
    let mut log = MetricsLog::new(ensemble.agent_names(), sim.num_sources);
    let mut slopes = vec![SlopeTracker::default(); sim.num_edges + 1];
    let (mut edge_states, mut center) = encode_states(&world.observe(), &sim);

    for epoch in 1..=cfg.max_epochs {
        let warm = ensemble.center.buffer.len() >= cfg.batch;
        let q: f64 = explore.random();
        let (edge_actions, center_action) = if warm && q >= cfg.epsilon {
            greedy_actions(ensemble, &edge_states, &center, &dims)?
        } else {
            (
                (0..sim.num_edges).map(|_| EdgeActionSet::random(&dims, &mut explore)).collect(),
                CenterAction::random(&dims, &mut explore),
            )
        };

        let outcome = world.step(&edge_actions, &center_action)?;
        let (next_edges, next_center) = encode_states(&outcome.observations, &sim);
        for (k, unit) in ensemble.edges.iter_mut().enumerate() {
            unit.buffer.push(Experience {
                state: std::mem::replace(&mut edge_states[k], next_edges[k].clone()),
                action: encode_edge_action(&edge_actions[k], &dims),
                penalty: outcome.penalty,
                next_state: next_edges[k].clone(),
            });
        }
        ensemble.center.buffer.push(Experience {
            state: std::mem::replace(&mut center, next_center.clone()),
            action: encode_center_action(&center_action),
            penalty: outcome.penalty,
            next_state: next_center,
        });

        let mut agent_stats = Vec::with_capacity(sim.num_edges + 1);
        for (unit, slope) in ensemble.units_mut().zip(&mut slopes) {
            let params = unit.actor.export_params();
            agent_stats.push(match replay_update(unit, cfg, &mut replay_rng)? {
                Some(s) => {
                    let l = slope.observe(params, s.actor_grad.clone());
                    Some(stats_entry(&s, l))
                }
                None => None,
            });
        }

        if is_scheduled(epoch, cfg.target_period) {
            for unit in ensemble.units_mut() {
                unit.update_targets(cfg.tau)?;
            }
        }
        if is_scheduled(epoch, cfg.fed_period) {
            ensemble.federate(cfg.omega, cfg.federate_critics)?;
        }

        log.record(epoch, world.state(), &outcome.deliveries, agent_stats);
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                ensemble.write_checkpoint(&dir.join(format!("epoch_{epoch}")))?;
            }
        }
    }
    Ok(log)
}

/// Replay-trained single actor-critic over the global state, used by the
/// centralized baseline.
pub(crate) fn centralized_unit(sim: &SimConfig, cfg: &TrainConfig) -> Result<AgentUnit> {
    let mut rng = stream(cfg.seed, Stream::Init);
    AgentUnit::new(
        ActorNet::centralized(sim, &cfg.arch, &mut rng)?,
        CriticNet::centralized(sim, &cfg.arch, &mut rng)?,
        cfg.buffer_capacity,
    )
}

#[cfg(test)]
mod tests;
