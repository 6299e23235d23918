//! Shared fixtures for the benchmarks: an untrained basis at the default
//! size and a buffer of transitions collected on ice.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use terrain_fe::fenode::BasisSet;
use terrain_fe::sim::{collect_dataset, ExcitationConfig, TerrainConfig, TruthModel};
use terrain_fe::Transition;

pub fn basis(k: usize) -> BasisSet {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    BasisSet::init(k, &[32, 32], &mut rng).expect("valid basis size")
}

pub fn ice_transitions(n: usize) -> Vec<Transition> {
    let truth = TruthModel::new(TerrainConfig::default(), 0.0);
    let duration = (n + 1) as f64 / 10.0 + 0.1;
    let (_, ds) = collect_dataset(&truth, &ExcitationConfig::default(), duration, 3).expect("collection succeeds");
    ds.transitions.into_iter().take(n).collect()
}
