mod common;

use common::{central_differences, flatten, frozen_noise_objective, max_relative_error};
use imb_core::gradient::raiko_backward;
use imb_core::net::NetworkParams;
use imb_core::objectives::ObjectiveWeights;
use imb_core::particles::{grow_particles, Growth, GrowthOptions, ParticleCloud};
use imb_core::rng::{stream, Purpose};
use rand::Rng;

fn random_point(seed: u64) -> (NetworkParams, Vec<ParticleCloud>, Vec<usize>, ObjectiveWeights) {
    let mut rng = stream(seed, Purpose::Init, &[99]);
    let mut p = NetworkParams::init(5, &[4, 3], 3, &mut rng);
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
    }
    let opts = if seed % 2 == 0 {
        GrowthOptions::new(2, Growth::Tree)
    } else {
        GrowthOptions {
            continuations: 2,
            ..GrowthOptions::new(3, Growth::Chain)
        }
    };
    let clouds: Vec<ParticleCloud> = (0..3)
        .map(|i| {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut prng = stream(seed, Purpose::Particles, &[i]);
            grow_particles(&p, &x, &opts, &mut prng).unwrap()
        })
        .collect();
    let labels = (0..3).map(|_| rng.gen_range(0..3)).collect();
    let w = ObjectiveWeights {
        gammas: (0..3).map(|_| rng.gen_range(0.0..1.5)).collect(),
        betas: (0..2).map(|_| rng.gen_range(0.1..2.0)).collect(),
    };
    (p, clouds, labels, w)
}

#[test]
fn surrogate_gradient_matches_frozen_noise_differences() {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (p, clouds, labels, w) = random_point(seed);
        let (bd, g) = raiko_backward(&p, &clouds, &labels, &w).unwrap();
        let at_theta0 = frozen_noise_objective(&p, &clouds, &labels, &w);
        assert!((at_theta0 - bd.total).abs() < 1e-12, "objective mismatch {at_theta0} vs {}", bd.total);
        let fd = central_differences(&p, 1e-5, |q| frozen_noise_objective(q, &clouds, &labels, &w));
        worst = worst.max(max_relative_error(&flatten(&g), &fd, 1e-6));
    }
    assert!(worst < 1e-4, "max relative error {worst:.3e}");
}

#[test]
fn likelihood_only_gradient_matches_differences() {
    for seed in 20..25 {
        let (p, clouds, labels, _) = random_point(seed);
        let w = ObjectiveWeights::mle(2);
        let (_, g) = raiko_backward(&p, &clouds, &labels, &w).unwrap();
        let fd = central_differences(&p, 1e-5, |q| frozen_noise_objective(q, &clouds, &labels, &w));
        let err = max_relative_error(&flatten(&g), &fd, 1e-6);
        assert!(err < 1e-4, "seed {seed}: {err:.3e}");
        // marginals do not enter the likelihood
        assert!(g.layers.iter().all(|l| l.marginal_logits.iter().all(|&v| v == 0.0)));
    }
}

#[test]
fn gradient_is_deterministic() {
    let (p, clouds, labels, w) = random_point(3);
    let (_, a) = raiko_backward(&p, &clouds, &labels, &w).unwrap();
    let (_, b) = raiko_backward(&p, &clouds, &labels, &w).unwrap();
    assert_eq!(flatten(&a), flatten(&b));
}
