#![allow(dead_code)]

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use terrain_fe::fenode::{self, BasisSet, TrainConfig};
use terrain_fe::sim::{collect_dataset, ExcitationConfig, TerrainConfig, TruthModel};
use terrain_fe::Dataset;

pub fn scene(theta: f64, seconds: f64, seed: u64) -> Dataset {
    let truth = TruthModel::new(TerrainConfig::default(), theta);
    collect_dataset(&truth, &ExcitationConfig::default(), seconds, seed).unwrap().1
}

/// Small basis trained once per test binary on three terrains.
pub fn small_basis() -> &'static BasisSet {
    static BASIS: OnceLock<BasisSet> = OnceLock::new();
    BASIS.get_or_init(|| {
        let sets: Vec<Dataset> = [0.25, 0.75, 1.0].iter().enumerate().map(|(i, &t)| scene(t, 60.0, 40 + i as u64)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut basis = BasisSet::init(4, &[16, 16], &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_per_dataset: 32,
            lr: 1e-2,
            lr_final: 1e-3,
            seed: 1,
            ..TrainConfig::default()
        };
        fenode::train(&mut basis, &sets, None, None, &cfg).unwrap();
        basis
    })
}
