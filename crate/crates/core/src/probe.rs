//! Grid probe for simultaneous optimality of two stacked bottlenecks.
//!
//! For a chain `Y -> X -> Z1 -> Z2` with binary `Z1`, `Z2` and at most four
//! input symbols, the probe enumerates encoders `q_x = p(z1 = 1 | x)` and
//! second-stage channels `c = (p(z2 = 1 | z1 = 0), p(z2 = 1 | z1 = 1))` on a
//! uniform grid with `G` points per coordinate, and evaluates
//!
//! ```text
//! L1(q)    = I(Z1; X) - beta1 I(Z1; Y)
//! L2(q, c) = I(Z2; X) - beta2 I(Z2; Y)
//! ```
//!
//! The two problems conflict on the grid when no grid point lies in both
//! argmin sets. Argmin sets collect points within `1e-9 * range` of the
//! minimum, where `range` is the objective's spread over the grid.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::exact::DiscreteJoint;
use crate::math::{binary_entropy, nats_to_bits, Matrix};

const MAX_INPUTS: usize = 4;
const RELATIVE_TOLERANCE: f64 = 1e-9;
const MAX_WITNESSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelFamily {
    /// Every grid channel `p(z2 | z1)`.
    Free,
    /// `z2` copies `z1`: `Z2` is a sufficient statistic of `Z1`.
    Copy,
    /// `p(z2 | z1)` does not depend on `z1`.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// `p(z1 = 1 | x)` per input symbol.
    pub encoder1: Vec<f64>,
    /// `[p(z2 = 1 | z1 = 0), p(z2 = 1 | z1 = 1)]`.
    pub encoder2: [f64; 2],
    pub l1_bits: f64,
    pub l2_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgminSummary {
    pub min_bits: f64,
    pub max_bits: f64,
    pub tolerance_bits: f64,
    pub count: u64,
    pub grid_size: u64,
    pub witnesses: Vec<Witness>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Conflicting,
    NonConflicting,
    NonConflictingSufficientStatistic,
    NonConflictingIndependent,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Conflicting => "conflicting",
            Verdict::NonConflicting => "non-conflicting",
            Verdict::NonConflictingSufficientStatistic => "non-conflicting (condition a)",
            Verdict::NonConflictingIndependent => "non-conflicting (condition b)",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub beta1: f64,
    pub beta2: f64,
    pub grid: usize,
    pub family: ChannelFamily,
    pub label_noise_bits: f64,
    pub l1: ArgminSummary,
    pub l2: ArgminSummary,
    /// Smallest `L2` reachable while `q` stays in the `L1` argmin set.
    pub l2_min_on_l1_argmin_bits: f64,
    /// A grid point in both argmin sets, if any.
    pub shared_optimum: Option<Witness>,
    pub verdict: Verdict,
}

struct Precomputed {
    px: Vec<f64>,
    py: Vec<f64>,
    grid: Vec<f64>,
    n_x: usize,
    /// per encoder index: `sum_x p(x) q_x`
    mean: Vec<f64>,
    /// per encoder index and label: `sum_x p(x|y) q_x`
    mix: Vec<f64>,
}

impl Precomputed {
    fn new(pxy: &Matrix, g: usize) -> Self {
        let n_x = pxy.rows;
        let n_y = pxy.cols;
        let px: Vec<f64> = (0..n_x).map(|x| pxy.row(x).iter().sum()).collect();
        let py: Vec<f64> = (0..n_y).map(|y| (0..n_x).map(|x| pxy.get(x, y)).sum()).collect();
        let px_given_y: Vec<Vec<f64>> = (0..n_y)
            .map(|y| (0..n_x).map(|x| if py[y] > 0.0 { pxy.get(x, y) / py[y] } else { 0.0 }).collect())
            .collect();
        let grid: Vec<f64> = (0..g).map(|k| k as f64 / (g - 1) as f64).collect();
        let total = g.pow(n_x as u32);
        let mut mean = Vec::with_capacity(total);
        let mut mix = Vec::with_capacity(total * n_y);
        let mut digits = vec![0usize; n_x];
        for _ in 0..total {
            mean.push(digits.iter().zip(&px).map(|(&k, &p)| p * grid[k]).sum());
            for w in &px_given_y {
                mix.push(digits.iter().zip(w).map(|(&k, &p)| p * grid[k]).sum());
            }
            increment(&mut digits, g);
        }
        Precomputed {
            px,
            py,
            grid,
            n_x,
            mean,
            mix,
        }
    }

    fn digits(&self, mut index: usize) -> Vec<usize> {
        let g = self.grid.len();
        (0..self.n_x)
            .map(|_| {
                let d = index % g;
                index /= g;
                d
            })
            .collect()
    }

    fn encoder(&self, index: usize) -> Vec<f64> {
        self.digits(index).into_iter().map(|k| self.grid[k]).collect()
    }

    /// IB Lagrangian in nats for a binary code with `p(z=1|x) = lo + span * q_x`.
    fn lagrangian(&self, index: usize, lo: f64, span: f64, beta: f64, entropy_table: &[f64], digits: &[usize]) -> f64 {
        let h_z = binary_entropy(lo + span * self.mean[index]);
        let h_z_given_x: f64 = digits.iter().zip(&self.px).map(|(&k, &p)| p * entropy_table[k]).sum();
        let n_y = self.py.len();
        let h_z_given_y: f64 = (0..n_y)
            .map(|y| self.py[y] * binary_entropy(lo + span * self.mix[index * n_y + y]))
            .sum();
        let i_zx = (h_z - h_z_given_x).max(0.0);
        let i_zy = (h_z - h_z_given_y).max(0.0);
        i_zx - beta * i_zy
    }
}

fn increment(digits: &mut [usize], g: usize) {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < g {
            return;
        }
        *d = 0;
    }
}

fn channels(family: ChannelFamily, grid: &[f64]) -> Vec<[f64; 2]> {
    match family {
        ChannelFamily::Free => grid.iter().flat_map(|&a| grid.iter().map(move |&b| [a, b])).collect(),
        ChannelFamily::Copy => vec![[0.0, 1.0]],
        ChannelFamily::Independent => grid.iter().map(|&a| [a, a]).collect(),
    }
}

pub fn conflict_probe(dj: &DiscreteJoint, beta1: f64, beta2: f64, grid: usize, family: ChannelFamily) -> Result<ProbeReport> {
    dj.validate()?;
    ensure!(grid >= 2, Contract, "grid needs at least 2 points per coordinate, got {}", grid);
    ensure!(
        dj.pxy.rows >= 1 && dj.pxy.rows <= MAX_INPUTS,
        Contract,
        "probe supports 1..={} input symbols, got {}",
        MAX_INPUTS,
        dj.pxy.rows
    );
    ensure!(
        beta1 > 0.0 && beta2 > 0.0 && beta1.is_finite() && beta2.is_finite(),
        Contract,
        "multipliers must be positive and finite"
    );
    let noise = dj.label_noise_entropy();
    ensure!(noise > 1e-12, Contract, "probe requires H(Y|X) > 0, got {:.3e} nats", noise);

    let pre = Precomputed::new(&dj.pxy, grid);
    let n_q = pre.mean.len();
    let chans = channels(family, &pre.grid);
    let h1: Vec<f64> = pre.grid.iter().map(|&q| binary_entropy(q)).collect();

    // L1 over encoders
    let mut l1 = Vec::with_capacity(n_q);
    let mut digits = vec![0usize; pre.n_x];
    for q in 0..n_q {
        l1.push(pre.lagrangian(q, 0.0, 1.0, beta1, &h1, &digits));
        increment(&mut digits, grid);
    }
    let (min1, max1) = min_max(&l1);
    let tol1 = RELATIVE_TOLERANCE * (max1 - min1);
    let in_a1: Vec<bool> = l1.iter().map(|&v| v <= min1 + tol1).collect();
    let count1 = in_a1.iter().filter(|&&b| b).count() as u64;

    let tables: Vec<Vec<f64>> = chans
        .iter()
        .map(|c| pre.grid.iter().map(|&q| binary_entropy(c[0] + (c[1] - c[0]) * q)).collect())
        .collect();
    let l2_at = |q: usize, ci: usize, digits: &[usize]| {
        let c = chans[ci];
        pre.lagrangian(q, c[0], c[1] - c[0], beta2, &tables[ci], digits)
    };

    let (mut min2, mut max2, mut min2_on_a1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for ci in 0..chans.len() {
        digits.iter_mut().for_each(|d| *d = 0);
        for q in 0..n_q {
            let v = l2_at(q, ci, &digits);
            min2 = min2.min(v);
            max2 = max2.max(v);
            if in_a1[q] {
                min2_on_a1 = min2_on_a1.min(v);
            }
            increment(&mut digits, grid);
        }
    }
    let tol2 = RELATIVE_TOLERANCE * (max2 - min2);

    let witness = |q: usize, ci: usize, l2: f64| Witness {
        encoder1: pre.encoder(q),
        encoder2: chans[ci],
        l1_bits: nats_to_bits(l1[q]),
        l2_bits: nats_to_bits(l2),
    };
    let mut count2 = 0u64;
    let mut witnesses2 = Vec::new();
    let mut shared = None;
    for ci in 0..chans.len() {
        digits.iter_mut().for_each(|d| *d = 0);
        for q in 0..n_q {
            let v = l2_at(q, ci, &digits);
            if v <= min2 + tol2 {
                count2 += 1;
                if witnesses2.len() < MAX_WITNESSES {
                    witnesses2.push(witness(q, ci, v));
                }
                if shared.is_none() && in_a1[q] {
                    shared = Some(witness(q, ci, v));
                }
            }
            increment(&mut digits, grid);
        }
    }

    let grid1 = n_q as u64;
    let grid2 = (n_q * chans.len()) as u64;
    let witnesses1: Vec<Witness> = (0..n_q)
        .filter(|&q| in_a1[q])
        .take(MAX_WITNESSES)
        .map(|q| {
            // pair each L1 optimum with its best second stage
            digits = pre.digits(q);
            let (ci, v) = (0..chans.len())
                .map(|ci| (ci, l2_at(q, ci, &digits)))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
            witness(q, ci, v)
        })
        .collect();

    let verdict = if count1 == grid1 || (count2 == grid2 && family != ChannelFamily::Independent) {
        Verdict::Inconclusive
    } else if shared.is_some() {
        match family {
            ChannelFamily::Copy => Verdict::NonConflictingSufficientStatistic,
            ChannelFamily::Independent => Verdict::NonConflictingIndependent,
            ChannelFamily::Free => Verdict::NonConflicting,
        }
    } else {
        Verdict::Conflicting
    };

    let summary = |min: f64, max: f64, tol: f64, count: u64, size: u64, witnesses: Vec<Witness>| ArgminSummary {
        min_bits: nats_to_bits(min),
        max_bits: nats_to_bits(max),
        tolerance_bits: nats_to_bits(tol),
        count,
        grid_size: size,
        witnesses,
    };
    Ok(ProbeReport {
        beta1,
        beta2,
        grid,
        family,
        label_noise_bits: nats_to_bits(noise),
        l1: summary(min1, max1, tol1, count1, grid1, witnesses1),
        l2: summary(min2, max2, tol2, count2, grid2, witnesses2),
        l2_min_on_l1_argmin_bits: nats_to_bits(min2_on_a1),
        shared_optimum: shared,
        verdict,
    })
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Noisy binary labels: `p(x) = px`, `y = labels[x]` flipped with probability `noise`.
pub fn noisy_label_joint(px: &[f64], labels: &[usize], noise: f64) -> DiscreteJoint {
    let rows: Vec<Vec<f64>> = px
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let mut row = vec![p * noise; 2];
            row[y] = p * (1.0 - noise);
            row
        })
        .collect();
    DiscreteJoint {
        pxy: Matrix::from_rows(&rows),
        channel1: None,
        channel2: None,
    }
}

/// Built-in probe instances by name: `generic`, `sufficient-statistic`, `independence`.
pub fn builtin_instance(name: &str) -> Option<(DiscreteJoint, ChannelFamily)> {
    let joint = noisy_label_joint(&[0.1, 0.2, 0.3, 0.4], &[0, 1, 0, 1], 0.1);
    match name {
        "generic" => Some((joint, ChannelFamily::Free)),
        "sufficient-statistic" => Some((joint, ChannelFamily::Copy)),
        "independence" => Some((joint, ChannelFamily::Independent)),
        _ => None,
    }
}

pub const BUILTIN_INSTANCES: [&str; 3] = ["generic", "sufficient-statistic", "independence"];
