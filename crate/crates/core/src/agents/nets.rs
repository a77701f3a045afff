use rand::Rng;

use super::encode::{centralized_state_len, edge_feature_len, AgentState};
use super::{ActionDims, ArchConfig, SoftActionSet};
use crate::env::{center_features_per_edge, move_cell_grid, SimConfig};
use crate::error::{Error, Result};
use crate::nn::{softmax, Network, NetworkBuilder, ParamVector, SgdConfig, SparseTensor, Tensor};

/// A model made of several [`Network`] parts handled as one parameter vector.
pub trait Model {
    fn parts(&self) -> Vec<&Network>;
    fn parts_mut(&mut self) -> Vec<&mut Network>;

    fn param_count(&self) -> usize {
        self.parts().iter().map(|n| n.param_count()).sum()
    }

    fn export_params(&self) -> ParamVector {
        ParamVector(self.parts().iter().flat_map(|n| n.export_params().0).collect())
    }

    fn export_grads(&self) -> ParamVector {
        ParamVector(self.parts().iter().flat_map(|n| n.export_grads().0).collect())
    }

    /// Writes gradients into `out` without allocating.
    fn copy_grads_into(&self, out: &mut [f64]) {
        let mut offset = 0;
        for part in self.parts() {
            let n = part.param_count();
            part.copy_grads_into(&mut out[offset..offset + n]);
            offset += n;
        }
    }

    fn import_params(&mut self, v: &ParamVector) -> Result<()> {
        let expected = self.param_count();
        if v.len() != expected {
            return Err(Error::LengthMismatch { expected, got: v.len() });
        }
        let mut offset = 0;
        for part in self.parts_mut() {
            let n = part.param_count();
            part.import_slice(&v.0[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    fn zero_grad(&mut self) {
        self.parts_mut().into_iter().for_each(Network::zero_grad);
    }

    fn sgd_step(&mut self, cfg: &SgdConfig) {
        for part in self.parts_mut() {
            part.sgd_step(cfg);
        }
    }

    fn grad_norm_sq(&self) -> f64 {
        self.parts().iter().map(|n| n.grad_norm_sq()).sum()
    }

    /// Rescales gradients so their joint norm is at most `max_norm`; 0 disables.
    fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm_sq().sqrt();
        if max_norm > 0.0 && norm > max_norm {
            let factor = max_norm / norm;
            self.parts_mut().into_iter().for_each(|n| n.scale_grads(factor));
        }
    }

    fn describe(&self) -> String {
        self.parts().iter().map(|n| n.describe()).collect::<Vec<_>>().join(";")
    }

    fn arch_hash(&self) -> String {
        crate::nn::arch_hash(&self.describe())
    }
}

/// Conv features pooled to one value per movement cell.
fn map_branch<R: Rng + ?Sized>(cfg: &SimConfig, arch: &ArchConfig, rng: &mut R) -> Result<Network> {
    NetworkBuilder::new(vec![2, cfg.r_obs, cfg.r_obs])
        .conv_relu_pool(arch.conv_channels, arch.conv_kernel, cfg.r_obs / cfg.r_move)
        .conv2d(1, 1)
        .build(rng)
}

fn head<R: Rng + ?Sized>(hidden: usize, out: usize, rng: &mut R) -> Result<Network> {
    NetworkBuilder::new(vec![hidden]).dense(out).build(rng)
}

/// Softmax restricted to entries where `mask` is true; the rest get exactly zero.
fn masked_softmax(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let Some(mask) = mask else {
        return Ok(softmax(logits));
    };
    if mask.len() != logits.len() {
        return Err(Error::LengthMismatch { expected: logits.len(), got: mask.len() });
    }
    let open: Vec<f64> = logits.iter().zip(mask).filter(|(_, m)| **m).map(|(l, _)| *l).collect();
    if open.is_empty() {
        return Ok(softmax(logits));
    }
    let mut p = softmax(&open).into_iter();
    Ok(mask.iter().map(|&m| if m { p.next().expect("one per open entry") } else { 0.0 }).collect())
}

/// `dL/dlogits` from `dL/dp` through a (masked) softmax with output `p`.
fn softmax_backward(p: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// Reorders a spatial score map into movement-cell order.
fn to_cells(grid: &[f64]) -> Vec<f64> {
    let r = side(grid.len());
    (0..grid.len()).map(|c| grid[move_cell_grid(c, r)]).collect()
}

/// Scatters per-cell values back onto the spatial score map.
fn to_grid(cells: &[f64]) -> Vec<f64> {
    let r = side(cells.len());
    let mut grid = vec![0.0; cells.len()];
    for (c, v) in cells.iter().enumerate() {
        grid[move_cell_grid(c, r)] = *v;
    }
    grid
}

fn side(len: usize) -> usize {
    (len as f64).sqrt().round() as usize
}

fn map_of(state: &AgentState) -> Result<&SparseTensor> {
    state.map.as_ref().ok_or(Error::ShapeMismatch { expected: vec![2, 0, 0], got: vec![] })
}

/// Policy network. The movement block (edge roles only) is a softmax over the
/// map branch's per-cell scores; every other block is a softmax over a dense
/// head on the shared trunk, restricted to the entries the state's mask leaves open.
#[derive(Debug, Clone)]
pub struct ActorNet {
    map_branch: Option<Network>,
    trunk: Network,
    heads: Vec<Network>,
    probs: Option<Vec<Vec<f64>>>,
}

impl ActorNet {
    pub fn edge<R: Rng + ?Sized>(cfg: &SimConfig, arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate(cfg)?;
        let map_branch = Some(map_branch(cfg, arch, rng)?);
        let trunk = NetworkBuilder::new(vec![edge_feature_len(cfg)]).dense(arch.hidden).relu().build(rng)?;
        let heads = vec![head(arch.hidden, cfg.buf_col_cap, rng)?, head(arch.hidden, cfg.buf_exe_cap, rng)?];
        Ok(Self { map_branch, trunk, heads, probs: None })
    }

    pub fn center<R: Rng + ?Sized>(cfg: &SimConfig, arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        let inputs = cfg.num_edges * center_features_per_edge(cfg);
        let trunk = NetworkBuilder::new(vec![inputs]).dense(arch.hidden).relu().build(rng)?;
        let heads = vec![head(arch.hidden, cfg.num_edges, rng)?];
        Ok(Self { map_branch: None, trunk, heads, probs: None })
    }

    /// Single actor emitting `[move, exe, off]` for every edge, then the bandwidth split.
    pub fn centralized<R: Rng + ?Sized>(cfg: &SimConfig, arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate(cfg)?;
        let trunk = NetworkBuilder::new(vec![centralized_state_len(cfg)]).dense(arch.hidden).relu().build(rng)?;
        let mut heads = Vec::with_capacity(3 * cfg.num_edges + 1);
        for _ in 0..cfg.num_edges {
            heads.push(head(arch.hidden, cfg.move_cells(), rng)?);
            heads.push(head(arch.hidden, cfg.buf_col_cap, rng)?);
            heads.push(head(arch.hidden, cfg.buf_exe_cap, rng)?);
        }
        heads.push(head(arch.hidden, cfg.num_edges, rng)?);
        Ok(Self { map_branch: None, trunk, heads, probs: None })
    }

    pub fn has_map_branch(&self) -> bool {
        self.map_branch.is_some()
    }

    pub fn predict(&self, state: &AgentState) -> Result<SoftActionSet> {
        let mut blocks = Vec::with_capacity(self.heads.len() + 1);
        let h = self.trunk.predict(&Tensor::vector(state.features.clone()))?;
        if let Some(m) = &self.map_branch {
            blocks.push(softmax(&to_cells(m.predict_sparse(map_of(state)?)?.data())));
        }
        for (i, head) in self.heads.iter().enumerate() {
            blocks.push(masked_softmax(head.predict(&h)?.data(), state.mask(i))?);
        }
        Ok(SoftActionSet { blocks })
    }

    /// Forward pass that caches activations for [`ActorNet::backward`].
    pub fn forward(&mut self, state: &AgentState) -> Result<SoftActionSet> {
        let mut blocks = Vec::with_capacity(self.heads.len() + 1);
        let h = self.trunk.forward(&Tensor::vector(state.features.clone()))?;
        if let Some(m) = &mut self.map_branch {
            blocks.push(softmax(&to_cells(m.forward_sparse(map_of(state)?)?.data())));
        }
        for (i, head) in self.heads.iter_mut().enumerate() {
            blocks.push(masked_softmax(head.forward(&h)?.data(), state.mask(i))?);
        }
        self.probs = Some(blocks.clone());
        Ok(SoftActionSet { blocks })
    }

    /// Accumulates parameter gradients for `dL/d(block)` given per block.
    pub fn backward(&mut self, block_grads: &[Vec<f64>]) -> Result<()> {
        let expected = self.heads.len() + usize::from(self.map_branch.is_some());
        if block_grads.len() != expected {
            return Err(Error::LengthMismatch { expected, got: block_grads.len() });
        }
        let probs = self.probs.take().ok_or(Error::MissingCache)?;
        let mut trunk_grad = vec![0.0; self.trunk.output_len()];
        let mut add = |d: &Tensor| {
            for (t, v) in trunk_grad.iter_mut().zip(d.data()) {
                *t += v;
            }
        };
        let mut pairs = probs.iter().zip(block_grads);
        if let Some(m) = &mut self.map_branch {
            let (p, g) = pairs.next().expect("length checked");
            m.backward_params(&Tensor::new(m.output_shape().to_vec(), to_grid(&softmax_backward(p, g)))?)?;
        }
        for (head, (p, g)) in self.heads.iter_mut().zip(pairs) {
            add(&head.backward(&Tensor::vector(softmax_backward(p, g)))?);
        }
        self.trunk.backward_params(&Tensor::vector(trunk_grad))
    }
}

impl Model for ActorNet {
    fn parts(&self) -> Vec<&Network> {
        self.map_branch.iter().chain(std::iter::once(&self.trunk)).chain(&self.heads).collect()
    }

    fn parts_mut(&mut self) -> Vec<&mut Network> {
        self.map_branch.iter_mut().chain(std::iter::once(&mut self.trunk)).chain(&mut self.heads).collect()
    }
}

/// Q network over `[map scores, state features, action, map scores * move block]`.
///
/// The map branch scores each movement cell, so the trailing product lets the
/// value of a move depend directly on what the map shows in that direction.
#[derive(Debug, Clone)]
pub struct CriticNet {
    map_branch: Option<Network>,
    head: Network,
    feature_len: usize,
    action_len: usize,
    cache: Option<(Vec<f64>, Vec<f64>)>,
}

impl CriticNet {
    pub fn edge<R: Rng + ?Sized>(cfg: &SimConfig, arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate(cfg)?;
        let map_branch = map_branch(cfg, arch, rng)?;
        let dims = ActionDims::new(cfg);
        Self::with_branch(Some(map_branch), edge_feature_len(cfg), dims.edge_action_len(), arch.hidden, rng)
    }

    pub fn center<R: Rng + ?Sized>(cfg: &SimConfig, arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        let features = cfg.num_edges * center_features_per_edge(cfg);
        Self::with_branch(None, features, cfg.num_edges, arch.hidden, rng)
    }

    pub fn centralized<R: Rng + ?Sized>(cfg: &SimConfig, arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate(cfg)?;
        let dims = ActionDims::new(cfg);
        let action = cfg.num_edges * dims.edge_action_len() + cfg.num_edges;
        Self::with_branch(None, centralized_state_len(cfg), action, arch.hidden, rng)
    }

    fn with_branch<R: Rng + ?Sized>(
        map_branch: Option<Network>,
        feature_len: usize,
        action_len: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let map_len = map_branch.as_ref().map_or(0, Network::output_len);
        let head = NetworkBuilder::new(vec![2 * map_len + feature_len + action_len])
            .dense(hidden)
            .relu()
            .dense(1)
            .build(rng)?;
        Ok(Self { map_branch, head, feature_len, action_len, cache: None })
    }

    pub fn action_len(&self) -> usize {
        self.action_len
    }

    fn map_scores(&self, state: &AgentState) -> Result<Vec<f64>> {
        match &self.map_branch {
            Some(m) => Ok(to_cells(m.predict_sparse(map_of(state)?)?.data())),
            None => Ok(Vec::new()),
        }
    }

    fn head_input(&self, scores: &[f64], state: &AgentState, action: &[f64]) -> Result<Tensor> {
        if state.features.len() != self.feature_len {
            return Err(Error::LengthMismatch { expected: self.feature_len, got: state.features.len() });
        }
        if action.len() != self.action_len {
            return Err(Error::LengthMismatch { expected: self.action_len, got: action.len() });
        }
        let mut x = Vec::with_capacity(2 * scores.len() + self.feature_len + self.action_len);
        x.extend_from_slice(scores);
        x.extend_from_slice(&state.features);
        x.extend_from_slice(action);
        x.extend(scores.iter().zip(action).map(|(m, a)| m * a));
        Ok(Tensor::vector(x))
    }

    /// Splits `dQ/dx` of the head input into `(dQ/dscores, dQ/daction)`.
    fn split_input_grad(&self, dx: &[f64], scores: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = scores.len();
        let a_off = n + self.feature_len;
        let d_prod = &dx[a_off + self.action_len..];
        let d_scores = (0..n).map(|i| dx[i] + d_prod[i] * action[i]).collect();
        let mut d_action = dx[a_off..a_off + self.action_len].to_vec();
        for i in 0..n {
            d_action[i] += d_prod[i] * scores[i];
        }
        (d_scores, d_action)
    }

    pub fn evaluate(&self, state: &AgentState, action: &[f64]) -> Result<f64> {
        let scores = self.map_scores(state)?;
        let x = self.head_input(&scores, state, action)?;
        Ok(self.head.predict(&x)?.data()[0])
    }

    /// Forward pass that caches activations for [`CriticNet::backward`].
    pub fn forward(&mut self, state: &AgentState, action: &[f64]) -> Result<f64> {
        let scores = match &mut self.map_branch {
            Some(m) => to_cells(m.forward_sparse(map_of(state)?)?.data()),
            None => Vec::new(),
        };
        let x = self.head_input(&scores, state, action)?;
        let q = self.head.forward(&x)?.data()[0];
        self.cache = Some((scores, action.to_vec()));
        Ok(q)
    }

    /// Accumulates parameter gradients of `dq * Q` and returns `dQ/d(action)` scaled by `dq`.
    pub fn backward(&mut self, dq: f64) -> Result<Vec<f64>> {
        let (scores, action) = self.cache.take().ok_or(Error::MissingCache)?;
        let dx = self.head.backward(&Tensor::vector(vec![dq]))?.into_data();
        let (d_scores, d_action) = self.split_input_grad(&dx, &scores, &action);
        if let Some(m) = &mut self.map_branch {
            m.backward_params(&Tensor::new(m.output_shape().to_vec(), to_grid(&d_scores))?)?;
        }
        Ok(d_action)
    }

    /// `Q(s, a)` and `dQ/da` without touching parameter gradients.
    pub fn action_gradient(&self, state: &AgentState, action: &[f64]) -> Result<(f64, Vec<f64>)> {
        let scores = self.map_scores(state)?;
        let x = self.head_input(&scores, state, action)?;
        let (q, dx) = self.head.input_gradient(&x, &Tensor::vector(vec![1.0]))?;
        let (_, d_action) = self.split_input_grad(dx.data(), &scores, action);
        Ok((q.data()[0], d_action))
    }
}

impl Model for CriticNet {
    fn parts(&self) -> Vec<&Network> {
        self.map_branch.iter().chain(std::iter::once(&self.head)).collect()
    }

    fn parts_mut(&mut self) -> Vec<&mut Network> {
        self.map_branch.iter_mut().chain(std::iter::once(&mut self.head)).collect()
    }
}
