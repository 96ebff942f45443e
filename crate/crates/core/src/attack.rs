//! Projected L2 gradient attacks and robustness scores.
//!
//! Input gradients come from the mean-field pass (firing probabilities in
//! place of samples). Decisions on clean and perturbed inputs use the
//! Monte-Carlo predictive with a fixed stream per image, so an unperturbed
//! input always receives its clean decision.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::math::{argmax, softmax};
use crate::net::NetworkParams;
use crate::rng::{stream, Purpose};
use crate::training::{predict_proba, InferenceOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Targeted,
    Untargeted,
}

impl std::fmt::Display for AttackMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackMode::Targeted => "targeted",
            AttackMode::Untargeted => "untargeted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub mode: AttackMode,
    pub steps: usize,
    pub step_size: f64,
    pub max_l2_radius: f64,
    /// Particle count of the predictive used for decisions.
    pub samples: usize,
    /// Target class for a single targeted attack; robustness runs enumerate all targets.
    #[serde(default)]
    pub target: Option<usize>,
}

impl AttackConfig {
    pub fn untargeted(steps: usize, step_size: f64, max_l2_radius: f64, samples: usize) -> Self {
        AttackConfig {
            mode: AttackMode::Untargeted,
            steps,
            step_size,
            max_l2_radius,
            samples,
            target: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.steps >= 1, Config, "attack steps must be >= 1");
        ensure!(
            self.max_l2_radius > 0.0 && self.max_l2_radius.is_finite(),
            Config,
            "max_l2_radius must be positive, got {}",
            self.max_l2_radius
        );
        ensure!(self.step_size >= 0.0 && self.step_size.is_finite(), Config, "step_size must be >= 0");
        ensure!(self.samples >= 1, Config, "attack samples must be >= 1");
        Ok(())
    }
}

/// Gradient of `-log p(yhat = class | x)` w.r.t. `x` through the mean-field pass.
pub fn input_gradient(params: &NetworkParams, x: &[f64], class: usize) -> Vec<f64> {
    let depth = params.depth();
    let mut states = vec![x.to_vec()];
    for l in 1..=depth {
        let probs = params.layer_forward_unchecked(l, &states[l - 1]).probs;
        states.push(probs);
    }
    let mut delta = softmax(&params.head_logits(&states[depth]));
    delta[class] -= 1.0;
    let mut dz = vec![0.0; params.width(depth)];
    params.head.weights.add_transpose_mul(&delta, &mut dz);
    for l in (1..=depth).rev() {
        let da: Vec<f64> = dz.iter().zip(&states[l]).map(|(&g, &p)| g * p * (1.0 - p)).collect();
        let mut prev = vec![0.0; states[l - 1].len()];
        params.layers[l - 1].encoder.weights.add_transpose_mul(&da, &mut prev);
        dz = prev;
    }
    dz
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|a| a * a).sum::<f64>().sqrt()
}

/// Iterative normalized-gradient L2 attack, projected onto the ball around `x`
/// and clipped to `[0, 1]` after every step. Untargeted mode ascends the loss
/// of `y_true`; targeted mode descends the loss of `cfg.target`.
pub fn l2_attack(params: &NetworkParams, x: &[f64], y_true: usize, cfg: &AttackConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    ensure!(x.len() == params.input_dim, Contract, "input has length {}, expected {}", x.len(), params.input_dim);
    ensure!(x.iter().all(|v| (0.0..=1.0).contains(v)), Contract, "attack input must lie in [0, 1]");
    let (class, sign) = match cfg.mode {
        AttackMode::Untargeted => (y_true, 1.0),
        AttackMode::Targeted => {
            let t = cfg.target.ok_or_else(|| crate::error::ImbError::Config("targeted attack needs a target".into()))?;
            ensure!(t < params.n_classes(), Config, "target {} outside {} classes", t, params.n_classes());
            (t, -1.0)
        }
    };
    let mut adv = x.to_vec();
    if cfg.step_size == 0.0 {
        return Ok(adv);
    }
    for _ in 0..cfg.steps {
        let g = input_gradient(params, &adv, class);
        let norm = l2(g.iter().copied());
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        for (a, gi) in adv.iter_mut().zip(&g) {
            *a += sign * cfg.step_size * gi / norm;
        }
        let dist = l2(adv.iter().zip(x).map(|(a, b)| a - b));
        if dist > cfg.max_l2_radius {
            let shrink = cfg.max_l2_radius / dist;
            for (a, &b) in adv.iter_mut().zip(x) {
                *a = b + (*a - b) * shrink;
            }
        }
        adv.iter_mut().for_each(|a| *a = a.clamp(0.0, 1.0));
    }
    Ok(adv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub image_index: usize,
    pub mode: AttackMode,
    pub target: Option<usize>,
    pub success: bool,
    pub l2_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub config: AttackConfig,
    pub images: usize,
    pub clean_accuracy_pct: f64,
    /// Untargeted: accuracy on attacked inputs over the whole subset.
    /// Targeted: share of (image, target) pairs that missed their target.
    pub robustness_pct: f64,
    /// Untargeted only: share of originally correct inputs that stay correct.
    pub retained_pct: Option<f64>,
    pub rows: Vec<AttackRow>,
}

pub const ATTACK_CSV_HEADER: &str = "image_index,mode,target,success,l2_norm";

impl RobustnessReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{ATTACK_CSV_HEADER}")?;
        for r in &self.rows {
            let target = r.target.map_or(String::new(), |t| t.to_string());
            writeln!(out, "{},{},{},{},{:.12}", r.image_index, r.mode, target, u8::from(r.success), r.l2_norm)?;
        }
        Ok(())
    }
}

/// Attacks every image of `subset` and scores how often the model holds.
///
/// Untargeted attacks run on the originally correct images; targeted attacks
/// aim every image at each of the other classes.
pub fn robustness_eval(params: &NetworkParams, subset: &Dataset, cfg: &AttackConfig, deterministic: bool, seed: u64) -> Result<RobustnessReport> {
    cfg.validate()?;
    ensure!(!subset.is_empty(), Contract, "attack subset is empty");
    ensure!(
        subset.dim() == params.input_dim && subset.n_classes == params.n_classes(),
        Contract,
        "subset ({} inputs, {} classes) does not fit the network ({} inputs, {} classes)",
        subset.dim(),
        subset.n_classes,
        params.input_dim,
        params.n_classes()
    );
    params.validate()?;
    let inf = InferenceOptions {
        samples: cfg.samples,
        deterministic,
    };
    let decide = |i: usize, x: &[f64]| {
        let mut rng = stream(seed, Purpose::Attack, &[i as u64]);
        argmax(&predict_proba(params, x, &inf, &mut rng))
    };
    let per_image: Vec<Result<(bool, Vec<AttackRow>)>> = (0..subset.len())
        .into_par_iter()
        .map(|i| {
            let x = subset.input(i);
            let y = subset.labels[i];
            let clean_ok = decide(i, x) == y;
            let targets: Vec<Option<usize>> = match cfg.mode {
                AttackMode::Untargeted if clean_ok => vec![None],
                AttackMode::Untargeted => Vec::new(),
                AttackMode::Targeted => (0..subset.n_classes).filter(|&t| t != y).map(Some).collect(),
            };
            let mut rows = Vec::with_capacity(targets.len());
            for target in targets {
                let c = AttackConfig { target, ..*cfg };
                let adv = l2_attack(params, x, y, &c)?;
                let pred = decide(i, &adv);
                let success = match target {
                    None => pred != y,
                    Some(t) => pred == t,
                };
                rows.push(AttackRow {
                    image_index: i,
                    mode: cfg.mode,
                    target,
                    success,
                    l2_norm: l2(adv.iter().zip(x).map(|(a, b)| a - b)),
                });
            }
            Ok((clean_ok, rows))
        })
        .collect();
    let mut rows = Vec::new();
    let mut clean_correct = 0usize;
    for r in per_image {
        let (ok, mut r) = r?;
        clean_correct += usize::from(ok);
        rows.append(&mut r);
    }
    let n = subset.len() as f64;
    let successes = rows.iter().filter(|r| r.success).count();
    let (robustness_pct, retained_pct) = match cfg.mode {
        AttackMode::Untargeted => {
            let held = clean_correct - successes;
            let retained = (clean_correct > 0).then(|| 100.0 * held as f64 / clean_correct as f64);
            (100.0 * held as f64 / n, retained)
        }
        AttackMode::Targeted => (100.0 * (rows.len() - successes) as f64 / rows.len() as f64, None),
    };
    Ok(RobustnessReport {
        config: *cfg,
        images: subset.len(),
        clean_accuracy_pct: 100.0 * clean_correct as f64 / n,
        robustness_pct,
        retained_pct,
        rows,
    })
}
