use rand::Rng;

use super::ActionDims;
use crate::env::{CenterAction, EdgeActionSet};

/// Actions that can be replaced by a uniformly random legal one.
pub trait Explore: Sized {
    fn random<R: Rng + ?Sized>(dims: &ActionDims, rng: &mut R) -> Self;
}

pub fn random_edge_action<R: Rng + ?Sized>(dims: &ActionDims, rng: &mut R) -> EdgeActionSet {
    EdgeActionSet::from_indices(
        rng.random_range(0..dims.move_cells),
        rng.random_range(0..dims.b_col),
        dims.b_col,
        rng.random_range(0..dims.b_exe),
        dims.b_exe,
    )
}

/// Uniform point on the simplex (flat Dirichlet via normalised exponentials).
pub fn random_center_action<R: Rng + ?Sized>(n_edges: usize, rng: &mut R) -> CenterAction {
    let draws: Vec<f64> = (0..n_edges).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let sum: f64 = draws.iter().sum();
    CenterAction {
        bandwidth_props: draws.into_iter().map(|d| d / sum).collect(),
    }
}

impl Explore for EdgeActionSet {
    fn random<R: Rng + ?Sized>(dims: &ActionDims, rng: &mut R) -> Self {
        random_edge_action(dims, rng)
    }
}

impl Explore for CenterAction {
    fn random<R: Rng + ?Sized>(dims: &ActionDims, rng: &mut R) -> Self {
        random_center_action(dims.n_edges, rng)
    }
}

/// With probability `epsilon` returns a random legal action, otherwise `greedy`.
pub fn epsilon_select<A: Explore, R: Rng + ?Sized>(rng: &mut R, epsilon: f64, greedy: A, dims: &ActionDims) -> A {
    if rng.random::<f64>() < epsilon {
        A::random(dims, rng)
    } else {
        greedy
    }
}
