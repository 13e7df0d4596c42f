//! Workload builders shared by the benchmark targets.

use abmil::data::{Bag, Split};
use abmil::rng::substream;
use abmil::{ModelConfig, ParamSet, Tensor};

/// Seeded random bag of `n` instances.
pub fn bench_bag(seed: u64, n: usize, dim: usize) -> Bag {
    use rand::Rng as _;
    let mut rng = substream(seed, "bench-bag", 0);
    let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let mut instance_labels = vec![0u8; n];
    instance_labels[0] = 1;
    Bag {
        instances: Tensor::new(vec![n, dim], data).unwrap(),
        instance_labels,
        label: 1,
        split: Split::Train,
    }
}

/// Default-architecture parameters for a given input width.
pub fn bench_params(seed: u64, dim: usize) -> ParamSet {
    let config = ModelConfig::new(dim);
    ParamSet::init(&config, &mut substream(seed, "init", 0))
}
