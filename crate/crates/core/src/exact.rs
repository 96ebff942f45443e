//! Exact distributions and mutual information for enumerable networks.
//!
//! States of an `n`-unit binary layer are indexed little-endian: unit `i`
//! is bit `i` of the state index. Conditional tables are row-stochastic
//! matrices with one row per conditioning value.
//!
//! Mutual information is reported in bits; the bound oracle in
//! [`exact_bounds`] works in nats to line up with the Monte-Carlo objectives.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, ImbError, Result};
use crate::math::{nats_to_bits, xlogx, xlogy_ratio, Matrix};
use crate::net::NetworkParams;
use crate::objectives::bernoulli_kl_unchecked;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationBudget {
    pub max_width: usize,
    pub max_inputs: usize,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget {
            max_width: 14,
            max_inputs: 1 << 14,
        }
    }
}

impl EnumerationBudget {
    pub fn check(&self, params: &NetworkParams, n_inputs: usize) -> Result<()> {
        ensure!(
            n_inputs <= self.max_inputs,
            Resource,
            "{} input patterns exceed the enumeration budget of {}",
            n_inputs,
            self.max_inputs
        );
        for l in 1..=params.depth() {
            let w = params.width(l);
            if w > self.max_width {
                return Err(ImbError::Resource(format!(
                    "layer {l} has width {w}, enumeration budget allows at most {} units ({} states)",
                    self.max_width,
                    1usize << self.max_width
                )));
            }
        }
        Ok(())
    }
}

/// Finite input distribution with labels: `inputs[x]` and `pxy[x, y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputJoint {
    pub inputs: Vec<Vec<f64>>,
    pub pxy: Matrix,
}

impl InputJoint {
    pub fn px(&self) -> Vec<f64> {
        (0..self.pxy.rows).map(|x| self.pxy.row(x).iter().sum()).collect()
    }

    pub fn py(&self) -> Vec<f64> {
        let mut py = vec![0.0; self.pxy.cols];
        for x in 0..self.pxy.rows {
            for (acc, v) in py.iter_mut().zip(self.pxy.row(x)) {
                *acc += v;
            }
        }
        py
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.inputs.len() == self.pxy.rows, Contract, "joint has {} inputs but {} rows", self.inputs.len(), self.pxy.rows);
        check_distribution(&self.pxy.data, 1e-12, "p(x, y)")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactLayerDistribution {
    pub layer: usize,
    /// `table[x, z] = p(z_l = z | x)`.
    pub table: Matrix,
}

fn check_distribution(p: &[f64], tol: f64, what: &str) -> Result<()> {
    ensure!(p.iter().all(|&v| v >= 0.0 && v.is_finite()), Contract, "{} has negative or non-finite entries", what);
    let total: f64 = p.iter().sum();
    ensure!((total - 1.0).abs() <= tol, Contract, "{} sums to {}, not 1", what, total);
    Ok(())
}

/// Joint distribution of independent Bernoulli units, little-endian states.
pub fn bernoulli_product(probs: &[f64]) -> Vec<f64> {
    let mut dist = Vec::with_capacity(1 << probs.len());
    dist.push(1.0);
    for &p in probs {
        let n = dist.len();
        dist.extend_from_within(..);
        for s in 0..n {
            dist[s] *= 1.0 - p;
            dist[s + n] *= p;
        }
    }
    dist
}

/// Binary vector of state `s` for an `n`-unit layer.
pub fn state_bits(s: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| ((s >> i) & 1) as f64).collect()
}

/// `T[z_{l-1}, z_l] = p(z_l | z_{l-1})` for hidden layer `l >= 2`.
pub fn transition_matrix(params: &NetworkParams, l: usize) -> Matrix {
    let n_prev = params.width(l - 1);
    let n = params.width(l);
    let mut t = Matrix::zeros(1 << n_prev, 1 << n);
    for s in 0..1 << n_prev {
        let probs = params.layer_forward_unchecked(l, &state_bits(s, n_prev)).probs;
        t.row_mut(s).copy_from_slice(&bernoulli_product(&probs));
    }
    t
}

/// `H[z_L, c] = p(yhat = c | z_L)`.
pub fn head_table(params: &NetworkParams) -> Matrix {
    let n = params.width(params.depth());
    let mut h = Matrix::zeros(1 << n, params.n_classes());
    for s in 0..1 << n {
        let probs = params.head_forward(&state_bits(s, n)).expect("head shape");
        h.row_mut(s).copy_from_slice(&probs);
    }
    h
}

/// Exact `p(z_l | x)` for every hidden layer.
pub fn propagate_exact(
    params: &NetworkParams,
    inputs: &[Vec<f64>],
    budget: &EnumerationBudget,
) -> Result<Vec<ExactLayerDistribution>> {
    params.validate()?;
    budget.check(params, inputs.len())?;
    for x in inputs {
        ensure!(x.len() == params.input_dim, Contract, "input of length {} for input dimension {}", x.len(), params.input_dim);
    }
    let n1 = params.width(1);
    let mut first = Matrix::zeros(inputs.len(), 1 << n1);
    for (r, x) in inputs.iter().enumerate() {
        let probs = params.layer_forward_unchecked(1, x).probs;
        first.row_mut(r).copy_from_slice(&bernoulli_product(&probs));
    }
    let mut out = vec![ExactLayerDistribution { layer: 1, table: first }];
    for l in 2..=params.depth() {
        let t = transition_matrix(params, l);
        let table = out[l - 2].table.matmul(&t);
        out.push(ExactLayerDistribution { layer: l, table });
    }
    Ok(out)
}

/// `I(Z; X)` in nats for channel `cond[x, z]` and input law `px`.
pub fn mutual_info_nats(cond: &Matrix, px: &[f64]) -> Result<f64> {
    ensure!(cond.rows == px.len(), Contract, "channel has {} rows for {} inputs", cond.rows, px.len());
    check_distribution(px, 1e-10, "p(x)")?;
    for x in 0..cond.rows {
        if px[x] > 0.0 {
            check_distribution(cond.row(x), 1e-10, "channel row")?;
        }
    }
    Ok(mutual_info_unchecked(cond, px))
}

pub(crate) fn mutual_info_unchecked(cond: &Matrix, px: &[f64]) -> f64 {
    let mut pz = vec![0.0; cond.cols];
    for (x, &p) in px.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (acc, &c) in pz.iter_mut().zip(cond.row(x)) {
            *acc += p * c;
        }
    }
    let mut total = 0.0;
    for (x, &p) in px.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let row: f64 = cond
            .row(x)
            .iter()
            .zip(&pz)
            .map(|(&c, &z)| xlogy_ratio(c, z))
            .sum();
        total += p * row;
    }
    total.max(0.0)
}

/// `I(Z; X)` in bits.
pub fn mutual_info(cond: &Matrix, px: &[f64]) -> Result<f64> {
    mutual_info_nats(cond, px).map(nats_to_bits)
}

/// `p(z | y) = sum_x p(x | y) p(z | x)` and the label marginal.
fn label_channel(cond: &Matrix, pxy: &Matrix) -> (Matrix, Vec<f64>) {
    let ny = pxy.cols;
    let mut py = vec![0.0; ny];
    let mut pzy = Matrix::zeros(ny, cond.cols);
    for x in 0..pxy.rows {
        for y in 0..ny {
            let w = pxy.get(x, y);
            if w == 0.0 {
                continue;
            }
            py[y] += w;
            for (acc, &c) in pzy.row_mut(y).iter_mut().zip(cond.row(x)) {
                *acc += w * c;
            }
        }
    }
    for y in 0..ny {
        if py[y] > 0.0 {
            let inv = 1.0 / py[y];
            pzy.row_mut(y).iter_mut().for_each(|v| *v *= inv);
        }
    }
    (pzy, py)
}

/// `I(Z; Y)` in bits through `Y -> X -> Z`.
pub fn layer_relevance(cond: &Matrix, pxy: &Matrix) -> Result<f64> {
    ensure!(cond.rows == pxy.rows, Contract, "channel has {} rows, joint has {} inputs", cond.rows, pxy.rows);
    check_distribution(&pxy.data, 1e-10, "p(x, y)")?;
    let (pzy, py) = label_channel(cond, pxy);
    mutual_info(&pzy, &py)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoPlanePoint {
    pub epoch: usize,
    pub layer: usize,
    pub i_zx_bits: f64,
    pub i_zy_bits: f64,
}

/// Information-plane coordinates of every hidden layer for one parameter snapshot.
pub fn info_plane_points(
    params: &NetworkParams,
    joint: &InputJoint,
    epoch: usize,
    budget: &EnumerationBudget,
) -> Result<Vec<InfoPlanePoint>> {
    let tables = propagate_exact(params, &joint.inputs, budget)?;
    let px = joint.px();
    tables
        .iter()
        .map(|d| {
            Ok(InfoPlanePoint {
                epoch,
                layer: d.layer,
                i_zx_bits: mutual_info(&d.table, &px)?,
                i_zy_bits: layer_relevance(&d.table, &joint.pxy)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpiViolation {
    pub epoch: usize,
    pub layer: usize,
    pub quantity: String,
    pub excess_bits: f64,
}

/// Data-processing check between consecutive layers, tolerance in bits.
pub fn dpi_violations(points: &[InfoPlanePoint], tol: f64) -> Vec<DpiViolation> {
    let mut out = Vec::new();
    for pair in points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.epoch != b.epoch || b.layer != a.layer + 1 {
            continue;
        }
        if b.i_zx_bits - a.i_zx_bits > tol {
            out.push(DpiViolation {
                epoch: b.epoch,
                layer: b.layer,
                quantity: "I(Z;X)".into(),
                excess_bits: b.i_zx_bits - a.i_zx_bits,
            });
        }
        if b.i_zy_bits - a.i_zy_bits > tol {
            out.push(DpiViolation {
                epoch: b.epoch,
                layer: b.layer,
                quantity: "I(Z;Y)".into(),
                excess_bits: b.i_zy_bits - a.i_zy_bits,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoPlaneTrace {
    pub points: Vec<InfoPlanePoint>,
    pub skipped_epochs: Vec<usize>,
    pub dpi_violations: Vec<DpiViolation>,
}

/// Exact trace over checkpoints `(epoch, params)`, ordered by (epoch, layer).
pub fn info_plane_trace(
    checkpoints: &[(usize, NetworkParams)],
    joint: &InputJoint,
    budget: &EnumerationBudget,
) -> InfoPlaneTrace {
    let mut ordered: Vec<&(usize, NetworkParams)> = checkpoints.iter().collect();
    ordered.sort_by_key(|(e, _)| *e);
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for (epoch, params) in ordered {
        match info_plane_points(params, joint, *epoch, budget) {
            Ok(p) => points.extend(p),
            Err(e) => {
                log::warn!("skipping epoch {epoch} in info-plane trace: {e}");
                skipped.push(*epoch);
            }
        }
    }
    let dpi = dpi_violations(&points, 1e-6);
    for v in &dpi {
        log::warn!("data-processing violation at epoch {} layer {}: {} exceeds by {:.3e} bits", v.epoch, v.layer, v.quantity, v.excess_bits);
    }
    InfoPlaneTrace {
        points,
        skipped_epochs: skipped,
        dpi_violations: dpi,
    }
}

pub const INFO_PLANE_HEADER: &str = "epoch,layer,i_zx_bits,i_zy_bits";

pub fn write_info_plane_csv<W: Write>(points: &[InfoPlanePoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{INFO_PLANE_HEADER}")?;
    for p in points {
        writeln!(out, "{},{},{:.12},{:.12}", p.epoch, p.layer, p.i_zx_bits, p.i_zy_bits)?;
    }
    Ok(())
}

pub fn read_info_plane_csv(text: &str) -> Result<Vec<InfoPlanePoint>> {
    let mut lines = text.lines();
    ensure!(lines.next() == Some(INFO_PLANE_HEADER), Contract, "info-plane CSV header must be `{}`", INFO_PLANE_HEADER);
    lines
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || ImbError::Contract(format!("malformed info-plane row {}: {line}", i + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(InfoPlanePoint {
                epoch: f[0].parse().map_err(|_| bad())?,
                layer: f[1].parse().map_err(|_| bad())?,
                i_zx_bits: f[2].parse().map_err(|_| bad())?,
                i_zy_bits: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Pointwise mean over runs, matched by (epoch, layer).
pub fn mean_trace(runs: &[Vec<InfoPlanePoint>]) -> Vec<InfoPlanePoint> {
    use std::collections::BTreeMap;
    let mut acc: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
    for run in runs {
        for p in run {
            let e = acc.entry((p.epoch, p.layer)).or_insert((0.0, 0.0, 0));
            e.0 += p.i_zx_bits;
            e.1 += p.i_zy_bits;
            e.2 += 1;
        }
    }
    acc.into_iter()
        .filter(|(_, (_, _, n))| *n == runs.len())
        .map(|((epoch, layer), (x, y, n))| InfoPlanePoint {
            epoch,
            layer,
            i_zx_bits: x / n as f64,
            i_zy_bits: y / n as f64,
        })
        .collect()
}

/// Exact values of the quantities the Monte-Carlo objectives estimate, in nats.
///
/// Index `l` runs over `0..=L` with `Z_0 = X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactBounds {
    /// True conditional entropy `H(Y | Z_l)` from the relevance decoder.
    pub conditional_entropy: Vec<f64>,
    /// Variational conditional relevance with the network's own decoder.
    pub vcr: Vec<f64>,
    /// `I(Z_l; Z_{l-1})`, zero at `l = 0`.
    pub layer_mi: Vec<f64>,
    /// Factorized bound on `I(Z_l; Z_{l-1})`, zero at `l = 0`.
    pub compression_bound: Vec<f64>,
    /// `-E log p(yhat = y | x)`.
    pub nll: f64,
}

fn conditional_entropy_nats(cond: &Matrix, pxy: &Matrix) -> f64 {
    // H(Y|Z) = H(Y, Z) - H(Z)
    let mut pzy = Matrix::zeros(cond.cols, pxy.cols);
    for x in 0..pxy.rows {
        for y in 0..pxy.cols {
            let w = pxy.get(x, y);
            if w == 0.0 {
                continue;
            }
            for (z, &c) in cond.row(x).iter().enumerate() {
                pzy.data[z * pxy.cols + y] += w * c;
            }
        }
    }
    let h_joint: f64 = -pzy.data.iter().map(|&v| xlogx(v)).sum::<f64>();
    let h_z: f64 = -(0..pzy.rows).map(|z| xlogx(pzy.row(z).iter().sum())).sum::<f64>();
    h_joint - h_z
}

/// `-sum_{x,y} p(x,y) sum_z cond[x,z] log dec[z,y]`.
fn cross_entropy_nats(cond: &Matrix, dec: &Matrix, pxy: &Matrix) -> f64 {
    let mut total = 0.0;
    for x in 0..pxy.rows {
        for y in 0..pxy.cols {
            let w = pxy.get(x, y);
            if w == 0.0 {
                continue;
            }
            let inner: f64 = cond
                .row(x)
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0.0)
                .map(|(z, &c)| c * dec.get(z, y).max(f64::MIN_POSITIVE).ln())
                .sum();
            total -= w * inner;
        }
    }
    total
}

pub fn exact_bounds(params: &NetworkParams, joint: &InputJoint, budget: &EnumerationBudget) -> Result<ExactBounds> {
    joint.validate()?;
    let depth = params.depth();
    let tables = propagate_exact(params, &joint.inputs, budget)?;
    let px = joint.px();
    let head = head_table(params);

    // decoders[l][z_l, y] = p(yhat | z_l), built from the top down
    let mut decoders: Vec<Matrix> = vec![Matrix::zeros(0, 0); depth + 1];
    decoders[depth] = head;
    for l in (1..depth).rev() {
        decoders[l] = transition_matrix(params, l + 1).matmul(&decoders[l + 1]);
    }
    let mut predictive = Matrix::zeros(joint.inputs.len(), params.n_classes());
    {
        let p = tables[0].table.matmul(&decoders[1]);
        predictive.data.copy_from_slice(&p.data);
    }
    decoders[0] = predictive;

    let identity = {
        let n = joint.inputs.len();
        let mut m = Matrix::zeros(n, n);
        (0..n).for_each(|i| m.set(i, i, 1.0));
        m
    };
    let cond_of = |l: usize| if l == 0 { &identity } else { &tables[l - 1].table };

    let mut conditional_entropy = Vec::with_capacity(depth + 1);
    let mut vcr = Vec::with_capacity(depth + 1);
    for l in 0..=depth {
        conditional_entropy.push(conditional_entropy_nats(cond_of(l), &joint.pxy));
        vcr.push(cross_entropy_nats(cond_of(l), &decoders[l], &joint.pxy));
    }

    let mut layer_mi = vec![0.0];
    let mut compression_bound = vec![0.0];
    for l in 1..=depth {
        let r = params.marginal(l);
        let kl_sum = |probs: &[f64]| -> f64 { probs.iter().zip(&r).map(|(&p, &ri)| bernoulli_kl_unchecked(p, ri)).sum() };
        if l == 1 {
            layer_mi.push(mutual_info_unchecked(&tables[0].table, &px));
            let bound: f64 = joint
                .inputs
                .iter()
                .zip(&px)
                .map(|(x, &w)| w * kl_sum(&params.layer_forward_unchecked(1, x).probs))
                .sum();
            compression_bound.push(bound);
        } else {
            let prev = &tables[l - 2].table;
            let mut p_prev = vec![0.0; prev.cols];
            for (x, &w) in px.iter().enumerate() {
                for (acc, &c) in p_prev.iter_mut().zip(prev.row(x)) {
                    *acc += w * c;
                }
            }
            layer_mi.push(mutual_info_unchecked(&transition_matrix(params, l), &p_prev));
            let n_prev = params.width(l - 1);
            let bound: f64 = p_prev
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(s, &w)| w * kl_sum(&params.layer_forward_unchecked(l, &state_bits(s, n_prev)).probs))
                .sum();
            compression_bound.push(bound);
        }
    }

    let nll = vcr[0];
    Ok(ExactBounds {
        conditional_entropy,
        vcr,
        layer_mi,
        compression_bound,
        nll,
    })
}

/// Finite chain `Y -> X -> Z1 -> Z2` given by `p(x, y)`, `p(z1 | x)` and `p(z2 | z1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    pub pxy: Matrix,
    pub channel1: Option<Matrix>,
    pub channel2: Option<Matrix>,
}

impl DiscreteJoint {
    pub fn validate(&self) -> Result<()> {
        check_distribution(&self.pxy.data, 1e-12, "p(x, y)")?;
        if let Some(c1) = &self.channel1 {
            ensure!(c1.rows == self.pxy.rows, Contract, "p(z1|x) has {} rows for {} inputs", c1.rows, self.pxy.rows);
            for r in 0..c1.rows {
                check_distribution(c1.row(r), 1e-12, "p(z1|x) row")?;
            }
            if let Some(c2) = &self.channel2 {
                ensure!(c2.rows == c1.cols, Contract, "p(z2|z1) has {} rows for {} states of z1", c2.rows, c1.cols);
                for r in 0..c2.rows {
                    check_distribution(c2.row(r), 1e-12, "p(z2|z1) row")?;
                }
            }
        }
        Ok(())
    }

    pub fn px(&self) -> Vec<f64> {
        (0..self.pxy.rows).map(|x| self.pxy.row(x).iter().sum()).collect()
    }

    /// `H(Y | X)` in nats.
    pub fn label_noise_entropy(&self) -> f64 {
        let px = self.px();
        let h_xy: f64 = -self.pxy.data.iter().map(|&v| xlogx(v)).sum::<f64>();
        let h_x: f64 = -px.iter().map(|&v| xlogx(v)).sum::<f64>();
        h_xy - h_x
    }
}

/// Lemma residuals `(delta_x, delta_y)` in nats.
///
/// Every information term comes from entropies of marginals of the full joint
/// `p(x, y, z1, z2)`, independently of the channel-based [`mutual_info`].
pub fn lemma1_residuals(dj: &DiscreteJoint) -> Result<(f64, f64)> {
    dj.validate()?;
    let c1 = dj.channel1.as_ref().ok_or_else(|| ImbError::Contract("chain needs p(z1|x)".into()))?;
    let c2 = dj.channel2.as_ref().ok_or_else(|| ImbError::Contract("chain needs p(z2|z1)".into()))?;
    let (nx, ny, n1, n2) = (dj.pxy.rows, dj.pxy.cols, c1.cols, c2.cols);
    let idx = |x: usize, y: usize, a: usize, b: usize| ((x * ny + y) * n1 + a) * n2 + b;
    let mut joint = vec![0.0; nx * ny * n1 * n2];
    for x in 0..nx {
        for y in 0..ny {
            for a in 0..n1 {
                for b in 0..n2 {
                    joint[idx(x, y, a, b)] = dj.pxy.get(x, y) * c1.get(x, a) * c2.get(a, b);
                }
            }
        }
    }
    // entropy of the marginal on the variables flagged in `keep` = [x, y, z1, z2]
    let entropy = |keep: [bool; 4]| -> f64 {
        let mut marg = std::collections::BTreeMap::<[usize; 4], f64>::new();
        for x in 0..nx {
            for y in 0..ny {
                for a in 0..n1 {
                    for b in 0..n2 {
                        let v = [x, y, a, b];
                        let mut key = [0usize; 4];
                        for k in 0..4 {
                            if keep[k] {
                                key[k] = v[k];
                            }
                        }
                        *marg.entry(key).or_insert(0.0) += joint[idx(x, y, a, b)];
                    }
                }
            }
        }
        -marg.values().map(|&p| xlogx(p)).sum::<f64>()
    };
    const X: [bool; 4] = [true, false, false, false];
    const Y: [bool; 4] = [false, true, false, false];
    const A: [bool; 4] = [false, false, true, false];
    const B: [bool; 4] = [false, false, false, true];
    let or = |a: [bool; 4], b: [bool; 4]| [a[0] | b[0], a[1] | b[1], a[2] | b[2], a[3] | b[3]];
    let mi = |u: [bool; 4], v: [bool; 4]| entropy(u) + entropy(v) - entropy(or(u, v));
    let cmi = |u: [bool; 4], v: [bool; 4], w: [bool; 4]| {
        entropy(or(u, w)) + entropy(or(v, w)) - entropy(or(or(u, v), w)) - entropy(w)
    };
    let delta_x = (mi(B, X) - (mi(A, X) - cmi(A, X, B))).abs();
    let delta_y = (mi(B, Y) - (mi(A, Y) - cmi(A, Y, B))).abs();
    Ok((delta_x, delta_y))
}
