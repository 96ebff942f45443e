//! Benchmark fixtures shared by the criterion benches.

pub use imb_core;

use imb_core::rng::{stream, Purpose};
use imb_core::{InputJoint, Matrix, NetworkParams};
use rand::Rng;

/// Network with weights drawn uniformly from `[-scale, scale]`.
pub fn random_net(seed: u64, input: usize, hidden: &[usize], classes: usize, scale: f64) -> NetworkParams {
    let mut rng = stream(seed, Purpose::Init, &[]);
    let mut p = NetworkParams::init(input, hidden, classes, &mut rng);
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
    p
}

/// Every binary pattern of `bits` inputs with a uniform `p(x)` and a parity label.
pub fn parity_joint(bits: usize) -> InputJoint {
    let n = 1usize << bits;
    let inputs: Vec<Vec<f64>> = (0..n).map(|s| (0..bits).map(|i| ((s >> i) & 1) as f64).collect()).collect();
    let mut pxy = Matrix::zeros(n, 2);
    for s in 0..n {
        pxy.set(s, s.count_ones() as usize % 2, 1.0 / n as f64);
    }
    InputJoint { inputs, pxy }
}

/// Uniform random inputs in `[0, 1]^dim`.
pub fn random_inputs(seed: u64, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, Purpose::Init, &[1]);
    (0..rows).map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect()).collect()
}
