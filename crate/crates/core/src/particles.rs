//! Particle clouds: sampled binary activations for one input.
//!
//! A cloud is a tree rooted at the input `x`. Layer `l` holds particles whose
//! parents live in layer `l - 1` (parent index 0 of layer 1 is the root).
//! Tree growth gives every particle `M` children; chain growth gives layer 1
//! `M` particles and each deeper particle exactly one child.
//!
//! Under chain growth with `continuations > 1`, every primary particle of
//! layers `1..L` additionally receives `continuations - 1` fresh paths down to
//! layer `L`. Those nodes are tagged [`ParticleRole::Continuation`] and only
//! feed the relevance estimate of the layer they branch from.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, ImbError, Result};
use crate::net::{sample_layer, BernoulliVector, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Growth {
    Tree,
    #[default]
    Chain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticleRole {
    Primary,
    /// Extra continuation path that serves the relevance term of `origin`.
    Continuation { origin: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    /// Binary state, or firing probabilities in the deterministic limit.
    pub state: Vec<f64>,
    /// The distribution this particle was drawn from.
    pub dist: BernoulliVector,
    pub parent: usize,
    pub role: ParticleRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthOptions {
    pub samples: usize,
    pub growth: Growth,
    pub continuations: usize,
    /// Replace samples by probabilities (deterministic sigmoid network).
    pub deterministic: bool,
    /// Maximum number of particles in one layer of one cloud.
    pub particle_budget: usize,
}

impl Default for GrowthOptions {
    fn default() -> Self {
        GrowthOptions {
            samples: 32,
            growth: Growth::Chain,
            continuations: 1,
            deterministic: false,
            particle_budget: 1 << 16,
        }
    }
}

impl GrowthOptions {
    pub fn new(samples: usize, growth: Growth) -> Self {
        GrowthOptions {
            samples,
            growth,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub input: Vec<f64>,
    pub growth: Growth,
    pub samples: usize,
    /// `layers[l - 1]` holds layer `l`.
    pub layers: Vec<Vec<Particle>>,
}

impl ParticleCloud {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Particles of layer `l` (1-based).
    pub fn layer(&self, l: usize) -> &[Particle] {
        &self.layers[l - 1]
    }

    /// State of the parent of a particle at layer `l`.
    pub fn parent_state(&self, l: usize, parent: usize) -> &[f64] {
        if l == 1 {
            &self.input
        } else {
            &self.layers[l - 2][parent].state
        }
    }

    pub fn primary_count(&self, l: usize) -> usize {
        self.layer(l)
            .iter()
            .filter(|p| p.role == ParticleRole::Primary)
            .count()
    }
}

/// Samples a particle cloud for input `x`.
pub fn grow_particles<R: Rng + ?Sized>(
    params: &NetworkParams,
    x: &[f64],
    opts: &GrowthOptions,
    rng: &mut R,
) -> Result<ParticleCloud> {
    ensure!(opts.samples >= 1, Contract, "particle count must be at least 1");
    ensure!(opts.continuations >= 1, Contract, "continuation count must be at least 1");
    ensure!(
        x.len() == params.input_dim,
        Contract,
        "input has length {}, expected {}",
        x.len(),
        params.input_dim
    );
    let depth = params.depth();
    let m = if opts.deterministic { 1 } else { opts.samples };
    if opts.growth == Growth::Tree && !opts.deterministic {
        let mut count: usize = 1;
        for l in 1..=depth {
            count = count.checked_mul(m).unwrap_or(usize::MAX);
            if count > opts.particle_budget {
                return Err(ImbError::Resource(format!(
                    "tree growth with M={m} needs {m}^{l} = {count} particles at layer {l}, \
                     budget is {}",
                    opts.particle_budget
                )));
            }
        }
    }

    let draw = |dist: &BernoulliVector, rng: &mut R| {
        if opts.deterministic {
            dist.probs.clone()
        } else {
            sample_layer(dist, rng)
        }
    };

    let mut layers: Vec<Vec<Particle>> = Vec::with_capacity(depth);
    for l in 1..=depth {
        let mut current = Vec::new();
        let parents: Vec<(usize, &[f64], ParticleRole)> = if l == 1 {
            vec![(0, x, ParticleRole::Primary)]
        } else {
            layers[l - 2]
                .iter()
                .enumerate()
                .map(|(i, p)| (i, p.state.as_slice(), p.role))
                .collect()
        };
        for (pi, pstate, prole) in parents {
            let mut dist = params.layer_forward_unchecked(l, pstate);
            let children = match (l, opts.growth, prole) {
                (1, _, _) => m,
                (_, Growth::Tree, _) => m,
                _ => 1,
            };
            for c in 0..children {
                let state = draw(&dist, rng);
                let dist = if c + 1 == children { std::mem::take(&mut dist) } else { dist.clone() };
                current.push(Particle {
                    state,
                    dist,
                    parent: pi,
                    role: prole,
                });
            }
        }
        ensure!(
            current.len() <= opts.particle_budget,
            Resource,
            "layer {} holds {} particles, budget is {}",
            l,
            current.len(),
            opts.particle_budget
        );
        layers.push(current);
    }

    if opts.growth == Growth::Chain && opts.continuations > 1 && !opts.deterministic {
        add_continuations(params, &mut layers, opts.continuations - 1, rng, &draw);
    }

    Ok(ParticleCloud {
        input: x.to_vec(),
        growth: opts.growth,
        samples: m,
        layers,
    })
}

fn add_continuations<R: Rng + ?Sized>(
    params: &NetworkParams,
    layers: &mut [Vec<Particle>],
    extra: usize,
    rng: &mut R,
    draw: &dyn Fn(&BernoulliVector, &mut R) -> Vec<f64>,
) {
    let depth = layers.len();
    for origin in 1..depth {
        let roots: Vec<usize> = layers[origin - 1]
            .iter()
            .enumerate()
            .filter(|(_, p)| p.role == ParticleRole::Primary)
            .map(|(i, _)| i)
            .collect();
        for root in roots {
            for _ in 0..extra {
                let mut parent = root;
                for l in origin + 1..=depth {
                    let dist = params.layer_forward_unchecked(l, &layers[l - 2][parent].state);
                    let state = draw(&dist, rng);
                    layers[l - 1].push(Particle {
                        state,
                        dist,
                        parent,
                        role: ParticleRole::Continuation { origin },
                    });
                    parent = layers[l - 1].len() - 1;
                }
            }
        }
    }
}
