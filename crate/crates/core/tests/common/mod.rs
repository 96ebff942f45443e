//! Independent reference computations shared by the integration suites.
#![allow(dead_code)]

use imb_core::net::NetworkParams;
use imb_core::objectives::ObjectiveWeights;
use imb_core::particles::{ParticleCloud, ParticleRole};

fn sig(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn kl(p: f64, r: f64) -> f64 {
    let t = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    t(p, r) + t(1.0 - p, 1.0 - r)
}

fn matvec(w: &imb_core::Matrix, b: &[f64], z: &[f64]) -> Vec<f64> {
    (0..w.rows)
        .map(|i| b[i] + (0..w.cols).map(|j| w.data[i * w.cols + j] * z[j]).sum::<f64>())
        .collect()
}

/// Ancestor index of leaf `j` at layer `l` (layer 0 is the input).
fn ancestor(cloud: &ParticleCloud, mut j: usize, l: usize) -> usize {
    let depth = cloud.layers.len();
    if l == 0 {
        return 0;
    }
    for k in (l + 1..=depth).rev() {
        j = cloud.layers[k - 1][j].parent;
    }
    j
}

/// Objective of one batch when every sample is replaced by
/// `sigma(a(theta)) + (sample - sigma(a(theta0)))`, with the noise taken from
/// clouds grown at `theta0`. Its exact gradient at `theta0` is the surrogate gradient.
pub fn frozen_noise_objective(params: &NetworkParams, clouds: &[ParticleCloud], labels: &[usize], w: &ObjectiveWeights) -> f64 {
    let depth = params.layers.len();
    let mut total = 0.0;
    for (cloud, &y) in clouds.iter().zip(labels) {
        let mut states: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut comp = vec![0.0; depth + 1];
        for l in 1..=depth {
            let enc = &params.layers[l - 1].encoder;
            let r: Vec<f64> = params.layers[l - 1].marginal_logits.iter().map(|&a| sig(a)).collect();
            let mut layer_states = Vec::new();
            let (mut kl_sum, mut n_primary) = (0.0, 0usize);
            for part in &cloud.layers[l - 1] {
                let parent = if l == 1 { cloud.input.clone() } else { states[l - 2][part.parent].clone() };
                let p: Vec<f64> = matvec(&enc.weights, &enc.bias, &parent).into_iter().map(sig).collect();
                let z: Vec<f64> = (0..p.len()).map(|u| p[u] + (part.state[u] - part.dist.probs[u])).collect();
                if part.role == ParticleRole::Primary {
                    kl_sum += p.iter().zip(&r).map(|(&a, &b)| kl(a, b)).sum::<f64>();
                    n_primary += 1;
                }
                layer_states.push(z);
            }
            comp[l] = kl_sum / n_primary as f64;
            states.push(layer_states);
        }
        let leaves = &cloud.layers[depth - 1];
        let lik: Vec<f64> = states[depth - 1]
            .iter()
            .map(|z| {
                let logits = matvec(&params.head.weights, &params.head.bias, z);
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = logits.iter().map(|v| (v - m).exp()).sum();
                (logits[y] - m).exp() / s
            })
            .collect();
        for l in 0..=depth {
            if w.gammas[l] == 0.0 {
                continue;
            }
            let n_groups = if l == 0 { 1 } else { cloud.layers[l - 1].len() };
            let mut sums = vec![0.0; n_groups];
            let mut counts = vec![0usize; n_groups];
            for (j, leaf) in leaves.iter().enumerate() {
                let eligible = match leaf.role {
                    ParticleRole::Primary => true,
                    ParticleRole::Continuation { origin } => origin == l,
                };
                if eligible {
                    let a = ancestor(cloud, j, l);
                    sums[a] += lik[j];
                    counts[a] += 1;
                }
            }
            let losses: Vec<f64> = sums
                .iter()
                .zip(&counts)
                .filter(|(_, &c)| c > 0)
                .map(|(&s, &c)| -(s / c as f64).ln())
                .collect();
            let vcr = losses.iter().sum::<f64>() / losses.len() as f64;
            let beta = if l == 0 { 0.0 } else { w.betas[l - 1] };
            total += w.gammas[l] * (vcr + beta * comp[l]);
        }
    }
    total / clouds.len() as f64
}

/// Central differences of `f` over every parameter, in canonical tensor order.
pub fn central_differences(params: &NetworkParams, h: f64, f: impl Fn(&NetworkParams) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.num_parameters());
    let mut work = params.clone();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    for (t, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let orig = work.tensors()[t][i];
            work.tensors_mut()[t][i] = orig + h;
            let plus = f(&work);
            work.tensors_mut()[t][i] = orig - h;
            let minus = f(&work);
            work.tensors_mut()[t][i] = orig;
            out.push((plus - minus) / (2.0 * h));
        }
    }
    out
}

pub fn flatten(params: &NetworkParams) -> Vec<f64> {
    params.tensors().into_iter().flat_map(|t| t.iter().copied()).collect()
}

/// Largest coordinate-wise relative error, with denominators floored at `floor`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
