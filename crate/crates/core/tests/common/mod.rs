#![allow(dead_code)]

use certfed::nn::{Dense, Layer, Model};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dense(rng: &mut ChaCha8Rng, i: usize, o: usize, scale: f64) -> Layer {
    let w = (0..i * o).map(|_| rng.random_range(-scale..scale)).collect();
    let b = (0..o).map(|_| rng.random_range(-scale..scale)).collect();
    Layer::Dense(Dense::new(i, o, w, b).unwrap())
}

/// Dense/ReLU stack with the given widths (first entry is the input size).
pub fn mlp(rng: &mut ChaCha8Rng, widths: &[usize]) -> Model {
    let mut layers = Vec::new();
    for (k, w) in widths.windows(2).enumerate() {
        if k > 0 {
            layers.push(Layer::Relu { dim: w[0] });
        }
        layers.push(dense(rng, w[0], w[1], 1.0));
    }
    Model::new(vec![widths[0]], layers).unwrap()
}

/// Random MLP with 1 to 3 affine layers of width at most 16.
pub fn random_small_mlp(rng: &mut ChaCha8Rng) -> Model {
    let depth = rng.random_range(1..=3);
    let mut widths = vec![rng.random_range(2..=8)];
    for _ in 0..depth - 1 {
        widths.push(rng.random_range(2..=16));
    }
    widths.push(rng.random_range(2..=5));
    mlp(rng, &widths)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
