//! Monte-Carlo estimators of the per-layer bottleneck terms.
//!
//! For a cloud grown from input `x` with label `y`:
//!
//! * `vcr_l` estimates the variational conditional relevance
//!   `-E log p_v(y | z_l)`, where `p_v(y | z_l)` is the head probability
//!   averaged over the layer-`L` descendants of each layer-`l` particle. The
//!   logarithm is taken after the inner average. `l = 0` groups every leaf
//!   under the input, which is exactly the Monte-Carlo negative log-likelihood.
//! * `comp_l` estimates the factorized upper bound on `I(Z_l; Z_{l-1})`: the
//!   average over primary layer-`l` particles of
//!   `sum_i KL(p(z_{l,i} | z_{l-1}) || r_{l,i})`.
//!
//! All quantities are in nats. Per-layer objective terms are
//! `gamma_l * (vcr_l + beta_l * comp_l)`, with `comp_0 = 0`.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, ImbError, Result};
use crate::math::{logsumexp, softmax, xlogy_ratio, PROB_FLOOR};
use crate::net::NetworkParams;
use crate::particles::{ParticleCloud, ParticleRole};

static FLOOR_HITS: AtomicU64 = AtomicU64::new(0);

/// Number of relevance averages clamped at the probability floor so far.
pub fn floor_hits() -> u64 {
    FLOOR_HITS.load(Ordering::Relaxed)
}

/// `KL(Bern(p) || Bern(r))` in nats.
pub fn bernoulli_kl(p: f64, r: f64) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) {
        return Err(ImbError::Domain(format!("marginal r = {r} must lie in (0, 1)")));
    }
    ensure!((0.0..=1.0).contains(&p), Domain, "probability p = {} outside [0, 1]", p);
    Ok(bernoulli_kl_unchecked(p, r))
}

#[inline]
pub(crate) fn bernoulli_kl_unchecked(p: f64, r: f64) -> f64 {
    (xlogy_ratio(p, r) + xlogy_ratio(1.0 - p, 1.0 - r)).max(0.0)
}

/// Layer weights `gamma_l` (l = 0..=L) and compression weights `beta_l` (l = 1..=L).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl ObjectiveWeights {
    pub fn uniform(depth: usize, gamma: f64, beta: f64) -> Self {
        ObjectiveWeights {
            gammas: vec![gamma; depth + 1],
            betas: vec![beta; depth],
        }
    }

    /// Negative log-likelihood only.
    pub fn mle(depth: usize) -> Self {
        let mut gammas = vec![0.0; depth + 1];
        gammas[0] = 1.0;
        ObjectiveWeights {
            gammas,
            betas: vec![1.0; depth],
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        ensure!(
            self.gammas.len() == depth + 1,
            Config,
            "expected {} gamma weights (layers 0..={}), got {}",
            depth + 1,
            depth,
            self.gammas.len()
        );
        ensure!(
            self.betas.len() == depth,
            Config,
            "expected {} beta weights (layers 1..={}), got {}",
            depth,
            depth,
            self.betas.len()
        );
        for (l, &g) in self.gammas.iter().enumerate() {
            ensure!(g >= 0.0 && g.is_finite(), Config, "gamma_{} = {} must be >= 0", l, g);
        }
        for (i, &b) in self.betas.iter().enumerate() {
            ensure!(b > 0.0 && b.is_finite(), Config, "beta_{} = {} must be > 0", i + 1, b);
        }
        Ok(())
    }

    /// Weight on `comp_l`, zero for `l = 0`.
    pub(crate) fn comp_weight(&self, l: usize) -> f64 {
        if l == 0 {
            0.0
        } else {
            self.gammas[l] * self.betas[l - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTerms {
    pub layer: usize,
    pub vcr: f64,
    pub comp: f64,
    pub gamma: f64,
    pub beta: f64,
    /// `gamma * (vcr + beta * comp)`.
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub layers: Vec<LayerTerms>,
    pub total: f64,
}

impl ObjectiveBreakdown {
    pub(crate) fn assemble(vcr: &[f64], comp: &[f64], weights: &ObjectiveWeights) -> Self {
        let layers: Vec<LayerTerms> = (0..vcr.len())
            .map(|l| {
                let gamma = weights.gammas[l];
                let beta = if l == 0 { 0.0 } else { weights.betas[l - 1] };
                let weighted = if gamma == 0.0 { 0.0 } else { gamma * (vcr[l] + beta * comp[l]) };
                LayerTerms {
                    layer: l,
                    vcr: vcr[l],
                    comp: comp[l],
                    gamma,
                    beta,
                    weighted,
                }
            })
            .collect();
        let total = layers.iter().map(|t| t.weighted).sum();
        ObjectiveBreakdown { layers, total }
    }

    /// Monte-Carlo negative log-likelihood (the layer-0 relevance term).
    pub fn nll(&self) -> f64 {
        self.layers[0].vcr
    }
}

/// Per-leaf head evaluation plus the leaf-to-ancestor map of one cloud.
pub(crate) struct CloudEval {
    /// `softmax(head(z_L))` for every layer-`L` particle.
    pub leaf_probs: Vec<Vec<f64>>,
    pub leaf_log_lik: Vec<f64>,
    /// `groups[l]`: leaves whose head probabilities are averaged before the log,
    /// one group per layer-`l` particle that has eligible descendants.
    pub groups: Vec<Vec<Vec<usize>>>,
}

impl CloudEval {
    pub fn new(cloud: &ParticleCloud, params: &NetworkParams, y: usize) -> Self {
        let depth = cloud.depth();
        let leaves = cloud.layer(depth);
        let mut leaf_probs = Vec::with_capacity(leaves.len());
        let mut leaf_log_lik = Vec::with_capacity(leaves.len());
        for leaf in leaves {
            let logits = params.head_logits(&leaf.state);
            leaf_log_lik.push(logits[y] - logsumexp(&logits));
            leaf_probs.push(softmax(&logits));
        }
        let mut ancestors = vec![vec![0; leaves.len()]; depth + 1];
        ancestors[depth] = (0..leaves.len()).collect();
        for l in (1..depth).rev() {
            let (lower, upper) = ancestors.split_at_mut(l + 1);
            for (dst, &child) in lower[l].iter_mut().zip(&upper[0]) {
                *dst = cloud.layer(l + 1)[child].parent;
            }
        }
        let groups = (0..=depth)
            .map(|l| {
                let n_groups = if l == 0 { 1 } else { cloud.layer(l).len() };
                let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
                for (j, leaf) in leaves.iter().enumerate() {
                    let eligible = match leaf.role {
                        ParticleRole::Primary => true,
                        ParticleRole::Continuation { origin } => origin == l,
                    };
                    if eligible {
                        groups[ancestors[l][j]].push(j);
                    }
                }
                groups.retain(|g| !g.is_empty());
                groups
            })
            .collect();
        CloudEval {
            leaf_probs,
            leaf_log_lik,
            groups,
        }
    }

    /// `-log(mean_j p_j(y))` for one group, floored; also reports whether the floor was hit.
    pub fn group_loss(&self, group: &[usize]) -> (f64, bool) {
        let lls: Vec<f64> = group.iter().map(|&j| self.leaf_log_lik[j]).collect();
        let log_mean = if lls.len() == 1 {
            lls[0]
        } else {
            logsumexp(&lls) - (lls.len() as f64).ln()
        };
        let floor = PROB_FLOOR.ln();
        if log_mean < floor || log_mean.is_nan() {
            FLOOR_HITS.fetch_add(1, Ordering::Relaxed);
            (-floor, true)
        } else {
            (-log_mean, false)
        }
    }

    pub fn relevance(&self, l: usize) -> f64 {
        let groups = &self.groups[l];
        let total: f64 = groups.iter().map(|g| self.group_loss(g).0).sum();
        total / groups.len() as f64
    }

    /// Class probabilities averaged over primary leaves.
    pub fn predictive(&self, cloud: &ParticleCloud) -> Vec<f64> {
        let leaves = cloud.layer(cloud.depth());
        let mut mean = vec![0.0; self.leaf_probs.first().map_or(0, Vec::len)];
        let mut n = 0usize;
        for (leaf, probs) in leaves.iter().zip(&self.leaf_probs) {
            if leaf.role == ParticleRole::Primary {
                for (m, p) in mean.iter_mut().zip(probs) {
                    *m += p;
                }
                n += 1;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        mean
    }
}

pub(crate) fn comp_unchecked(cloud: &ParticleCloud, params: &NetworkParams, l: usize) -> f64 {
    let r = params.marginal(l);
    let mut total = 0.0;
    let mut n = 0usize;
    for part in cloud.layer(l) {
        if part.role != ParticleRole::Primary {
            continue;
        }
        total += part
            .dist
            .probs
            .iter()
            .zip(&r)
            .map(|(&p, &ri)| bernoulli_kl_unchecked(p, ri))
            .sum::<f64>();
        n += 1;
    }
    total / n as f64
}

fn check_cloud(cloud: &ParticleCloud, params: &NetworkParams) -> Result<()> {
    ensure!(
        cloud.depth() == params.depth() && cloud.depth() >= 1,
        Contract,
        "cloud depth {} does not match network depth {}",
        cloud.depth(),
        params.depth()
    );
    ensure!(
        cloud.layers.iter().all(|layer| !layer.is_empty()),
        Contract,
        "particle cloud is empty"
    );
    Ok(())
}

/// Monte-Carlo estimate of the factorized bound on `I(Z_l; Z_{l-1})`, `l` in `1..=L`.
pub fn compression_term(cloud: &ParticleCloud, params: &NetworkParams, l: usize) -> Result<f64> {
    check_cloud(cloud, params)?;
    ensure!(l >= 1 && l <= params.depth(), Contract, "compression layer {} outside 1..={}", l, params.depth());
    for r in params.marginal(l) {
        ensure!(r > 0.0 && r < 1.0, Domain, "marginal of layer {} saturated at {}", l, r);
    }
    Ok(comp_unchecked(cloud, params, l))
}

/// Monte-Carlo variational conditional relevance of layer `l` in `0..=L`.
pub fn vcr_term(cloud: &ParticleCloud, params: &NetworkParams, l: usize, y: usize) -> Result<f64> {
    check_cloud(cloud, params)?;
    ensure!(l <= params.depth(), Contract, "relevance layer {} outside 0..={}", l, params.depth());
    ensure!(y < params.n_classes(), Contract, "label {} outside {} classes", y, params.n_classes());
    Ok(CloudEval::new(cloud, params, y).relevance(l))
}

/// Monte-Carlo negative log-likelihood `-log mean_paths p(y | z_L)`.
pub fn nll_term(cloud: &ParticleCloud, params: &NetworkParams, y: usize) -> Result<f64> {
    vcr_term(cloud, params, 0, y)
}

/// Per-input terms of one cloud: `(vcr[0..=L], comp[0..=L])`, `comp[0] = 0`.
pub(crate) fn cloud_terms(
    eval: &CloudEval,
    cloud: &ParticleCloud,
    params: &NetworkParams,
    weights: Option<&ObjectiveWeights>,
) -> (Vec<f64>, Vec<f64>) {
    let depth = cloud.depth();
    let mut vcr = vec![0.0; depth + 1];
    let mut comp = vec![0.0; depth + 1];
    for l in 0..=depth {
        let active = weights.map_or(true, |w| w.gammas[l] > 0.0);
        if active {
            vcr[l] = eval.relevance(l);
            if l >= 1 {
                comp[l] = comp_unchecked(cloud, params, l);
            }
        }
    }
    (vcr, comp)
}

/// Batch objective: terms averaged over inputs, then weighted per layer.
pub fn joint_objective(
    clouds: &[ParticleCloud],
    labels: &[usize],
    params: &NetworkParams,
    weights: &ObjectiveWeights,
) -> Result<ObjectiveBreakdown> {
    weights.validate(params.depth())?;
    ensure!(
        clouds.len() == labels.len() && !clouds.is_empty(),
        Contract,
        "{} clouds for {} labels",
        clouds.len(),
        labels.len()
    );
    let depth = params.depth();
    let mut vcr = vec![0.0; depth + 1];
    let mut comp = vec![0.0; depth + 1];
    for (cloud, &y) in clouds.iter().zip(labels) {
        check_cloud(cloud, params)?;
        ensure!(y < params.n_classes(), Contract, "label {} outside {} classes", y, params.n_classes());
        let eval = CloudEval::new(cloud, params, y);
        let (v, c) = cloud_terms(&eval, cloud, params, None);
        for l in 0..=depth {
            vcr[l] += v[l];
            comp[l] += c[l];
        }
    }
    let n = clouds.len() as f64;
    vcr.iter_mut().for_each(|v| *v /= n);
    comp.iter_mut().for_each(|c| *c /= n);
    Ok(ObjectiveBreakdown::assemble(&vcr, &comp, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::{grow_particles, Growth, GrowthOptions};
    use crate::rng::{stream, Purpose};
    use std::f64::consts::LN_2;

    #[test]
    fn kl_examples() {
        assert_eq!(bernoulli_kl(0.5, 0.5).unwrap(), 0.0);
        assert!((bernoulli_kl(1.0, 0.5).unwrap() - LN_2).abs() < 1e-15);
        // 0.3 ln(3/7) + 0.7 ln(7/3) = 0.4 ln(7/3) = 0.33891...
        let expect = 0.4 * (7.0f64 / 3.0).ln();
        assert!((bernoulli_kl(0.3, 0.7).unwrap() - expect).abs() < 1e-15);
        assert!(matches!(bernoulli_kl(0.3, 0.0), Err(ImbError::Domain(_))));
        assert!(matches!(bernoulli_kl(0.3, 1.0), Err(ImbError::Domain(_))));
    }

    fn cloud_for(params: &NetworkParams, m: usize, growth: Growth, seed: u64) -> ParticleCloud {
        let mut rng = stream(seed, Purpose::Particles, &[]);
        let x = vec![1.0; params.input_dim];
        grow_particles(params, &x, &GrowthOptions::new(m, growth), &mut rng).unwrap()
    }

    #[test]
    fn compression_vanishes_when_encoder_equals_marginal() {
        let p = NetworkParams::zeros(3, &[2, 2], 2);
        let cloud = cloud_for(&p, 4, Growth::Tree, 1);
        assert_eq!(compression_term(&cloud, &p, 1).unwrap(), 0.0);
        assert_eq!(compression_term(&cloud, &p, 2).unwrap(), 0.0);
    }

    #[test]
    fn compression_of_certain_unit_is_ln2() {
        let mut p = NetworkParams::zeros(2, &[1], 2);
        p.layers[0].encoder.bias[0] = 1e3;
        let cloud = cloud_for(&p, 5, Growth::Chain, 2);
        assert!((compression_term(&cloud, &p, 1).unwrap() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn uniform_head_gives_log_classes() {
        let mut rng = stream(4, Purpose::Init, &[]);
        let mut p = NetworkParams::init(3, &[4, 3], 10, &mut rng);
        p.head = crate::net::DenseLayer::zeros(10, 3);
        let cloud = cloud_for(&p, 3, Growth::Tree, 3);
        for l in 0..=2 {
            assert!((vcr_term(&cloud, &p, l, 7).unwrap() - 10f64.ln()).abs() < 1e-12);
        }
        assert!((nll_term(&cloud, &p, 7).unwrap() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn top_layer_relevance_is_mean_leaf_loss() {
        let mut rng = stream(9, Purpose::Init, &[]);
        let p = NetworkParams::init(3, &[4, 3], 3, &mut rng);
        let cloud = cloud_for(&p, 3, Growth::Tree, 3);
        let manual: f64 = cloud
            .layer(2)
            .iter()
            .map(|leaf| -p.head_forward(&leaf.state).unwrap()[1].ln())
            .sum::<f64>()
            / 9.0;
        assert!((vcr_term(&cloud, &p, 2, 1).unwrap() - manual).abs() < 1e-12);
    }

    #[test]
    fn nll_and_super_layer_relevance_agree_bitwise() {
        let mut rng = stream(10, Purpose::Init, &[]);
        let p = NetworkParams::init(4, &[3, 3], 2, &mut rng);
        for growth in [Growth::Tree, Growth::Chain] {
            let cloud = cloud_for(&p, 4, growth, 8);
            let a = nll_term(&cloud, &p, 1).unwrap();
            let b = vcr_term(&cloud, &p, 0, 1).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn saturated_correct_network_has_zero_nll() {
        let mut p = NetworkParams::zeros(1, &[1], 2);
        p.layers[0].encoder.bias[0] = 1e3;
        p.head.weights.data = vec![1e3, -1e3];
        let cloud = cloud_for(&p, 4, Growth::Chain, 0);
        assert!(nll_term(&cloud, &p, 0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn joint_objective_reductions() {
        let mut rng = stream(12, Purpose::Init, &[]);
        let p = NetworkParams::init(3, &[2, 2], 2, &mut rng);
        let clouds: Vec<_> = (0..5).map(|s| cloud_for(&p, 3, Growth::Chain, s)).collect();
        let labels = vec![0, 1, 1, 0, 1];

        let mle = joint_objective(&clouds, &labels, &p, &ObjectiveWeights::mle(2)).unwrap();
        assert_eq!(mle.total, mle.nll());

        let zero = ObjectiveWeights {
            gammas: vec![0.0; 3],
            betas: vec![1.0; 2],
        };
        assert_eq!(joint_objective(&clouds, &labels, &p, &zero).unwrap().total, 0.0);

        let full = ObjectiveWeights::uniform(2, 1.0, 1e-4);
        let bd = joint_objective(&clouds, &labels, &p, &full).unwrap();
        let summed: f64 = bd.layers.iter().map(|t| t.vcr + t.beta * t.comp).sum();
        assert!((bd.total - summed).abs() < 1e-12);
        assert_eq!(bd.layers[0].comp, 0.0);
        assert!(bd.layers.iter().all(|t| t.comp >= 0.0 && t.vcr.is_finite()));
    }

    #[test]
    fn invalid_weights_are_config_errors() {
        let bad_gamma = ObjectiveWeights {
            gammas: vec![1.0, -0.5],
            betas: vec![1.0],
        };
        assert!(matches!(bad_gamma.validate(1), Err(ImbError::Config(_))));
        let bad_beta = ObjectiveWeights {
            gammas: vec![1.0, 1.0],
            betas: vec![0.0],
        };
        assert!(matches!(bad_beta.validate(1), Err(ImbError::Config(_))));
    }
}
