//! Surrogate gradients of the Monte-Carlo objective.
//!
//! The forward pass uses binary samples. The backward pass treats every
//! sample `z = 1[u < sigma(a)]` as if `dz/da = sigma'(a)`, so gradients flow
//! through the firing probabilities. The compression terms are differentiated
//! in closed form:
//!
//! ```text
//! d KL(sigma(a) || sigma(rho)) / da   = sigma'(a) (a - rho)
//! d KL(sigma(a) || sigma(rho)) / drho = sigma(rho) - sigma(a)
//! ```

use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::math::{argmax, logsumexp, PROB_FLOOR};
use crate::net::{Gradients, NetworkParams};
use crate::objectives::{cloud_terms, CloudEval, ObjectiveBreakdown, ObjectiveWeights};
use crate::particles::{ParticleCloud, ParticleRole};

/// Clouds per work unit. Fixed so that the reduction order does not depend on
/// the thread count.
const CHUNK: usize = 16;

/// Objective, gradient and the number of clouds whose predictive argmax hit the label.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub breakdown: ObjectiveBreakdown,
    pub grads: Gradients,
    pub correct: usize,
}

/// Gradient of the batch objective `mean_n sum_l gamma_l (vcr_l + beta_l comp_l)`.
pub fn raiko_backward(
    params: &NetworkParams,
    clouds: &[ParticleCloud],
    labels: &[usize],
    weights: &ObjectiveWeights,
) -> Result<(ObjectiveBreakdown, Gradients)> {
    let pass = backward_pass(params, clouds, labels, weights)?;
    Ok((pass.breakdown, pass.grads))
}

pub fn backward_pass(
    params: &NetworkParams,
    clouds: &[ParticleCloud],
    labels: &[usize],
    weights: &ObjectiveWeights,
) -> Result<BackwardPass> {
    weights.validate(params.depth())?;
    ensure!(
        !clouds.is_empty() && clouds.len() == labels.len(),
        Contract,
        "{} clouds for {} labels",
        clouds.len(),
        labels.len()
    );
    for (cloud, &y) in clouds.iter().zip(labels) {
        check_cloud(params, cloud)?;
        ensure!(y < params.n_classes(), Contract, "label {} outside {} classes", y, params.n_classes());
    }
    let depth = params.depth();
    let scale = 1.0 / clouds.len() as f64;
    let items: Vec<(&ParticleCloud, usize)> = clouds.iter().zip(labels.iter().copied()).collect();
    let partials: Vec<Partial> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Partial::new(params);
            for &(cloud, y) in chunk {
                acc.add_cloud(params, cloud, y, weights, scale);
            }
            acc
        })
        .collect();
    let mut total = Partial::new(params);
    for p in &partials {
        total.grads.add_scaled(&p.grads, 1.0);
        for l in 0..=depth {
            total.vcr[l] += p.vcr[l];
            total.comp[l] += p.comp[l];
        }
        total.correct += p.correct;
    }
    let vcr: Vec<f64> = total.vcr.iter().map(|v| v * scale).collect();
    let comp: Vec<f64> = total.comp.iter().map(|c| c * scale).collect();
    Ok(BackwardPass {
        breakdown: ObjectiveBreakdown::assemble(&vcr, &comp, weights),
        grads: total.grads,
        correct: total.correct,
    })
}

fn check_cloud(params: &NetworkParams, cloud: &ParticleCloud) -> Result<()> {
    ensure!(
        cloud.depth() == params.depth(),
        Contract,
        "cloud depth {} does not match network depth {}",
        cloud.depth(),
        params.depth()
    );
    for l in 1..=cloud.depth() {
        let width = params.width(l);
        ensure!(!cloud.layer(l).is_empty(), Contract, "layer {} of a particle cloud is empty", l);
        for part in cloud.layer(l) {
            ensure!(
                part.dist.pre_activations.len() == width && part.dist.probs.len() == width,
                Contract,
                "particle at layer {} lacks stored pre-activations",
                l
            );
        }
    }
    Ok(())
}

struct Partial {
    grads: Gradients,
    vcr: Vec<f64>,
    comp: Vec<f64>,
    correct: usize,
}

impl Partial {
    fn new(params: &NetworkParams) -> Self {
        Partial {
            grads: params.zeros_like(),
            vcr: vec![0.0; params.depth() + 1],
            comp: vec![0.0; params.depth() + 1],
            correct: 0,
        }
    }

    fn add_cloud(&mut self, params: &NetworkParams, cloud: &ParticleCloud, y: usize, weights: &ObjectiveWeights, scale: f64) {
        let depth = cloud.depth();
        let eval = CloudEval::new(cloud, params, y);
        let (vcr, comp) = cloud_terms(&eval, cloud, params, Some(weights));
        for l in 0..=depth {
            self.vcr[l] += vcr[l];
            self.comp[l] += comp[l];
        }
        if argmax(&eval.predictive(cloud)) == y {
            self.correct += 1;
        }

        // d objective / d log p_j(y) for every leaf j
        let leaves = cloud.layer(depth);
        let mut leaf_coef = vec![0.0; leaves.len()];
        let floor = PROB_FLOOR.ln();
        for l in 0..=depth {
            let gamma = weights.gammas[l];
            if gamma == 0.0 {
                continue;
            }
            let groups = &eval.groups[l];
            let per_group = gamma * scale / groups.len() as f64;
            for group in groups {
                let lls: Vec<f64> = group.iter().map(|&j| eval.leaf_log_lik[j]).collect();
                let lse = logsumexp(&lls);
                if lse - (lls.len() as f64).ln() < floor {
                    continue;
                }
                for (&j, &ll) in group.iter().zip(&lls) {
                    leaf_coef[j] -= per_group * (ll - lse).exp();
                }
            }
        }

        // head
        let n_classes = params.n_classes();
        let mut dz: Vec<Vec<f64>> = vec![vec![0.0; params.width(depth)]; leaves.len()];
        let mut dlogits = vec![0.0; n_classes];
        for (j, leaf) in leaves.iter().enumerate() {
            let c = leaf_coef[j];
            if c == 0.0 {
                continue;
            }
            for (k, d) in dlogits.iter_mut().enumerate() {
                let target = if k == y { 1.0 } else { 0.0 };
                *d = c * (target - eval.leaf_probs[j][k]);
            }
            self.grads.head.weights.add_outer(&dlogits, &leaf.state);
            for (b, d) in self.grads.head.bias.iter_mut().zip(&dlogits) {
                *b += d;
            }
            params.head.weights.add_transpose_mul(&dlogits, &mut dz[j]);
        }

        // hidden layers, top down
        for l in (1..=depth).rev() {
            let layer = cloud.layer(l);
            let comp_w = weights.comp_weight(l);
            let n_primary = layer.iter().filter(|p| p.role == ParticleRole::Primary).count();
            let comp_scale = if comp_w > 0.0 { comp_w * scale / n_primary as f64 } else { 0.0 };
            let rho = &params.layers[l - 1].marginal_logits;
            let r = params.marginal(l);
            let n_parents = if l == 1 { 1 } else { cloud.layer(l - 1).len() };
            let mut da_parent: Vec<Option<Vec<f64>>> = vec![None; n_parents];
            let width = params.width(l);
            let grad_layer = &mut self.grads.layers[l - 1];
            for (i, part) in layer.iter().enumerate() {
                let with_comp = comp_scale > 0.0 && part.role == ParticleRole::Primary;
                let upstream = &dz[i];
                if !with_comp && upstream.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let slot = da_parent[part.parent].get_or_insert_with(|| vec![0.0; width]);
                for u in 0..width {
                    let p = part.dist.probs[u];
                    let slope = p * (1.0 - p);
                    let mut da = upstream[u] * slope;
                    if with_comp {
                        da += comp_scale * slope * (part.dist.pre_activations[u] - rho[u]);
                        grad_layer.marginal_logits[u] += comp_scale * (r[u] - p);
                    }
                    slot[u] += da;
                }
            }
            let enc = &params.layers[l - 1].encoder;
            let mut dz_prev: Vec<Vec<f64>> = if l > 1 {
                vec![vec![0.0; params.width(l - 1)]; n_parents]
            } else {
                Vec::new()
            };
            for (pi, da) in da_parent.iter().enumerate() {
                let Some(da) = da else { continue };
                let z_parent = cloud.parent_state(l, pi);
                grad_layer.encoder.weights.add_outer(da, z_parent);
                for (b, d) in grad_layer.encoder.bias.iter_mut().zip(da) {
                    *b += d;
                }
                if l > 1 {
                    enc.weights.add_transpose_mul(da, &mut dz_prev[pi]);
                }
            }
            dz = dz_prev;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{bernoulli_kl, joint_objective};
    use crate::particles::{grow_particles, Growth, GrowthOptions};
    use crate::rng::{stream, Purpose};

    fn clouds(params: &NetworkParams, n: usize, opts: &GrowthOptions) -> Vec<ParticleCloud> {
        (0..n)
            .map(|i| {
                let mut rng = stream(3, Purpose::Particles, &[i as u64]);
                let x: Vec<f64> = (0..params.input_dim).map(|k| ((i + k) % 2) as f64).collect();
                grow_particles(params, &x, opts, &mut rng).unwrap()
            })
            .collect()
    }

    #[test]
    fn objective_matches_joint_objective() {
        let mut rng = stream(1, Purpose::Init, &[]);
        let p = NetworkParams::init(4, &[3, 3], 3, &mut rng);
        let cs = clouds(&p, 5, &GrowthOptions::new(3, Growth::Tree));
        let labels = vec![0, 1, 2, 1, 0];
        let w = ObjectiveWeights::uniform(2, 1.0, 0.3);
        let (bd, _) = raiko_backward(&p, &cs, &labels, &w).unwrap();
        let direct = joint_objective(&cs, &labels, &p, &w).unwrap();
        assert!((bd.total - direct.total).abs() < 1e-12);
    }

    #[test]
    fn compression_gradient_vanishes_at_its_minimum() {
        let mut p = NetworkParams::zeros(3, &[2], 2);
        p.head.weights.data = vec![0.3, -0.2, 0.1, 0.4];
        let cs = clouds(&p, 4, &GrowthOptions::new(4, Growth::Chain));
        let w = ObjectiveWeights {
            gammas: vec![0.0, 1.0],
            betas: vec![1.0],
        };
        // the two weightings differ only in the compression part
        let (_, g1) = raiko_backward(&p, &cs, &[0, 1, 0, 1], &w).unwrap();
        let w2 = ObjectiveWeights {
            gammas: vec![0.0, 1.0],
            betas: vec![2.0],
        };
        let (_, g2) = raiko_backward(&p, &cs, &[0, 1, 0, 1], &w2).unwrap();
        for (a, b) in g1.layers[0].encoder.weights.data.iter().zip(&g2.layers[0].encoder.weights.data) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(g1.layers[0].marginal_logits.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn marginal_gradient_matches_closed_form() {
        let mut rng = stream(2, Purpose::Init, &[]);
        let mut p = NetworkParams::init(3, &[2], 2, &mut rng);
        p.layers[0].marginal_logits = vec![0.4, -1.1];
        let cs = clouds(&p, 3, &GrowthOptions::new(5, Growth::Chain));
        let w = ObjectiveWeights {
            gammas: vec![0.0, 1.0],
            betas: vec![1.0],
        };
        let (_, g) = raiko_backward(&p, &cs, &[0, 1, 1], &w).unwrap();
        let comp_at = |rho: &[f64]| {
            let mut q = p.clone();
            q.layers[0].marginal_logits = rho.to_vec();
            let r = q.marginal(1);
            let mut total = 0.0;
            for c in &cs {
                let layer = c.layer(1);
                let s: f64 = layer
                    .iter()
                    .map(|part| part.dist.probs.iter().zip(&r).map(|(&pp, &rr)| bernoulli_kl(pp, rr).unwrap()).sum::<f64>())
                    .sum();
                total += s / layer.len() as f64;
            }
            total / cs.len() as f64
        };
        let rho = p.layers[0].marginal_logits.clone();
        for u in 0..2 {
            let h = 1e-5;
            let mut plus = rho.clone();
            plus[u] += h;
            let mut minus = rho.clone();
            minus[u] -= h;
            let fd = (comp_at(&plus) - comp_at(&minus)) / (2.0 * h);
            let an = g.layers[0].marginal_logits[u];
            assert!((fd - an).abs() / an.abs().max(1e-8) < 1e-6, "{fd} vs {an}");
        }
    }

    #[test]
    fn missing_pre_activations_are_rejected() {
        let p = NetworkParams::zeros(2, &[2], 2);
        let mut cs = clouds(&p, 1, &GrowthOptions::new(2, Growth::Chain));
        cs[0].layers[0][0].dist.pre_activations.clear();
        let err = raiko_backward(&p, &cs, &[0], &ObjectiveWeights::mle(1)).unwrap_err();
        assert!(matches!(err, crate::error::ImbError::Contract(_)));
    }
}
