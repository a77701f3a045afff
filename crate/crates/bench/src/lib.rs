//! Fixtures shared by the benchmarks.

use edgefed_core::agents::{ActionDims, Explore};
use edgefed_core::profile::Profile;
use edgefed_core::{CenterAction, EdgeActionSet, SimConfig, World};
use rand::Rng;

pub fn desk_world(seed: u64) -> World {
    World::new(SimConfig { seed, ..Profile::Desk.sim() }).expect("desk profile is valid")
}

/// Uniformly random actions for every edge plus a random bandwidth split.
pub fn random_joint_action<R: Rng + ?Sized>(sim: &SimConfig, rng: &mut R) -> (Vec<EdgeActionSet>, CenterAction) {
    let dims = ActionDims::new(sim);
    let acts = (0..sim.num_edges).map(|_| EdgeActionSet::random(&dims, rng)).collect();
    (acts, CenterAction::random(&dims, rng))
}
