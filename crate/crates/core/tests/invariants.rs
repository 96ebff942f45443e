use imb_core::exact::{exact_bounds, lemma1_residuals, mutual_info, DiscreteJoint};
use imb_core::objectives::{bernoulli_kl, joint_objective};
use imb_core::particles::grow_particles;
use imb_core::rng::{stream, Purpose};
use imb_core::{EnumerationBudget, Growth, GrowthOptions, InputJoint, Matrix, NetworkParams, ObjectiveWeights, ParticleRole};
use proptest::prelude::*;
use rand::Rng;

fn net(seed: u64, input: usize, hidden: &[usize], classes: usize, scale: f64) -> NetworkParams {
    let mut rng = stream(seed, Purpose::Init, &[]);
    let mut p = NetworkParams::init(input, hidden, classes, &mut rng);
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
    p
}

fn simplex(weights: &[f64]) -> Vec<f64> {
    let s: f64 = weights.iter().sum();
    weights.iter().map(|w| w / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_nonnegative_and_zero_on_diagonal(p in 0.0f64..=1.0, r in 1e-6f64..(1.0 - 1e-6)) {
        let kl = bernoulli_kl(p, r).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(bernoulli_kl(r, r).unwrap().abs() < 1e-15);
    }

    #[test]
    fn clouds_have_the_requested_shape(
        seed in 0u64..1000,
        samples in 1usize..6,
        tree in any::<bool>(),
        continuations in 1usize..3,
    ) {
        let p = net(seed, 3, &[3, 2], 2, 2.0);
        let growth = if tree { Growth::Tree } else { Growth::Chain };
        let opts = GrowthOptions { continuations, ..GrowthOptions::new(samples, growth) };
        let cloud = grow_particles(&p, &[0.5, 1.0, 0.0], &opts, &mut stream(seed, Purpose::Particles, &[])).unwrap();
        prop_assert_eq!(cloud.depth(), 2);
        for l in 1..=2 {
            let expected = if tree { samples.pow(l as u32) } else { samples };
            prop_assert_eq!(cloud.primary_count(l), expected);
            for part in cloud.layer(l) {
                prop_assert!(part.state.iter().all(|&s| s == 0.0 || s == 1.0));
                prop_assert!(part.dist.probs.iter().all(|&q| (0.0..=1.0).contains(&q)));
                if l > 1 {
                    prop_assert!(part.parent < cloud.layer(l - 1).len());
                }
                if part.role == ParticleRole::Primary && l > 1 {
                    prop_assert_eq!(cloud.layer(l - 1)[part.parent].role, ParticleRole::Primary);
                }
            }
        }
    }

    #[test]
    fn objective_terms_are_finite_and_ordered(seed in 0u64..1000, beta in 0.0f64..4.0) {
        let p = net(seed, 3, &[3, 2], 3, 3.0);
        let opts = GrowthOptions::new(4, Growth::Chain);
        let mut rng = stream(seed, Purpose::Particles, &[]);
        let xs = [[0.0, 1.0, 0.3], [1.0, 0.2, 0.9]];
        let clouds: Vec<_> = xs.iter().map(|x| grow_particles(&p, x, &opts, &mut rng).unwrap()).collect();
        let w = ObjectiveWeights::uniform(2, 1.0, beta);
        let b = joint_objective(&clouds, &[0, 2], &p, &w).unwrap();
        prop_assert!(b.total.is_finite());
        for t in &b.layers {
            prop_assert!(t.vcr >= 0.0 && t.comp >= 0.0);
        }
        prop_assert_eq!(b.layers[0].comp, 0.0);
    }

    #[test]
    fn exact_information_respects_processing_order(seed in 0u64..500, w in prop::collection::vec(0.01f64..1.0, 16)) {
        let p = net(seed, 3, &[3, 2], 2, 3.0);
        let inputs: Vec<Vec<f64>> = (0..8).map(|s| (0..3).map(|i| ((s >> i) & 1) as f64).collect()).collect();
        let joint = InputJoint { inputs, pxy: Matrix { rows: 8, cols: 2, data: simplex(&w) } };
        let b = exact_bounds(&p, &joint, &EnumerationBudget::default()).unwrap();
        for l in 0..=2 {
            prop_assert!(b.vcr[l] - b.conditional_entropy[l] >= -1e-10);
        }
        // relevance can only be lost going up
        for l in 1..=2 {
            prop_assert!(b.conditional_entropy[l] - b.conditional_entropy[l - 1] >= -1e-10);
            prop_assert!(b.compression_bound[l] - b.layer_mi[l] >= -1e-10);
        }
    }

    #[test]
    fn mutual_information_is_bounded(rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 4)) {
        let cond = Matrix::from_rows(&rows.iter().map(|r| simplex(r)).collect::<Vec<_>>());
        let px = vec![0.25; 4];
        let mi = mutual_info(&cond, &px).unwrap();
        prop_assert!(mi >= -1e-12);
        prop_assert!(mi <= 3f64.log2() + 1e-12);
    }

    #[test]
    fn chain_identity_holds_for_random_chains(w in prop::collection::vec(0.01f64..1.0, 6 + 9 + 6)) {
        let dj = DiscreteJoint {
            pxy: Matrix { rows: 3, cols: 2, data: simplex(&w[..6]) },
            channel1: Some(Matrix::from_rows(&w[6..15].chunks(3).map(simplex).collect::<Vec<_>>())),
            channel2: Some(Matrix::from_rows(&w[15..].chunks(2).map(simplex).collect::<Vec<_>>())),
        };
        let (dx, dy) = lemma1_residuals(&dj).unwrap();
        prop_assert!(dx < 1e-12 && dy < 1e-12);
    }
}
