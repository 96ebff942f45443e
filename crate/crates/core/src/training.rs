//! Training loops (joint, greedy, maximum likelihood) and evaluation.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Batches, Dataset};
use crate::error::{ensure, ImbError, Result};
use crate::exact::{info_plane_points, EnumerationBudget, InfoPlanePoint};
use crate::gradient::backward_pass;
use crate::math::{argmax, softmax_into};
use crate::net::{sample_layer, NetworkParams};
use crate::objectives::{ObjectiveBreakdown, ObjectiveWeights};
use crate::optim::{optimizer_step, OptimizerConfig, OptimizerState};
use crate::particles::{grow_particles, Growth, GrowthOptions, ParticleCloud};
use crate::rng::{derive_seed, stream, Purpose, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Joint,
    Greedy,
    Mle,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Joint => "joint",
            Algorithm::Greedy => "greedy",
            Algorithm::Mle => "mle",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImbConfig {
    pub hidden_widths: Vec<usize>,
    /// One value per hidden layer, or a single value for all of them.
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    /// One value per layer `0..=L`, or a single value for all of them.
    #[serde(default = "default_gammas")]
    pub gammas: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub growth: Growth,
    #[serde(default = "one")]
    pub continuations: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Exact information-plane logging stride in epochs; 0 disables it.
    #[serde(default)]
    pub mi_eval_every: usize,
    /// Held-out error stride in epochs; 0 evaluates only at the start and the end.
    #[serde(default = "one")]
    pub eval_every: usize,
    /// Particle count for held-out evaluation; defaults to `samples`.
    #[serde(default)]
    pub eval_samples: Option<usize>,
    #[serde(default)]
    pub algorithm: Algorithm,
    /// Replace samples by probabilities everywhere (deterministic sigmoid network).
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default = "default_budget")]
    pub particle_budget: usize,
    /// Stop when the 100-epoch moving average of the objective improves by less than 1e-6.
    #[serde(default)]
    pub early_stop: bool,
}

fn default_betas() -> Vec<f64> {
    vec![1e-4]
}
fn default_gammas() -> Vec<f64> {
    vec![1.0]
}
fn default_samples() -> usize {
    32
}
fn one() -> usize {
    1
}
fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::sgd(0.1)
}
fn default_batch() -> usize {
    100
}
fn default_budget() -> usize {
    1 << 16
}

impl ImbConfig {
    pub fn new(hidden_widths: Vec<usize>, epochs: usize) -> Self {
        ImbConfig {
            hidden_widths,
            betas: default_betas(),
            gammas: default_gammas(),
            samples: default_samples(),
            growth: Growth::Chain,
            continuations: 1,
            optimizer: default_optimizer(),
            epochs,
            batch_size: default_batch(),
            seed: 0,
            mi_eval_every: 0,
            eval_every: 1,
            eval_samples: None,
            algorithm: Algorithm::Joint,
            deterministic: false,
            particle_budget: default_budget(),
            early_stop: false,
        }
    }

    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.hidden_widths.is_empty(), Config, "hidden_widths must name at least one layer");
        ensure!(self.hidden_widths.iter().all(|&w| w > 0), Config, "hidden layer widths must be positive");
        ensure!(self.samples >= 1, Config, "samples must be >= 1");
        ensure!(self.continuations >= 1, Config, "continuations must be >= 1");
        ensure!(self.batch_size >= 1, Config, "batch_size must be >= 1");
        ensure!(self.eval_samples != Some(0), Config, "eval_samples must be >= 1");
        self.optimizer.validate()?;
        self.weights()?.validate(self.depth())
    }

    /// Per-layer weights after broadcasting; the likelihood-only weights under `mle`.
    pub fn weights(&self) -> Result<ObjectiveWeights> {
        let depth = self.depth();
        if self.algorithm == Algorithm::Mle {
            return Ok(ObjectiveWeights::mle(depth));
        }
        let broadcast = |v: &[f64], n: usize, name: &str| -> Result<Vec<f64>> {
            match v.len() {
                1 => Ok(vec![v[0]; n]),
                k if k == n => Ok(v.to_vec()),
                k => Err(ImbError::Config(format!("{name} has {k} entries, expected 1 or {n}"))),
            }
        };
        let w = ObjectiveWeights {
            gammas: broadcast(&self.gammas, depth + 1, "gammas")?,
            betas: broadcast(&self.betas, depth, "betas")?,
        };
        w.validate(depth)?;
        Ok(w)
    }

    pub fn growth_options(&self) -> GrowthOptions {
        GrowthOptions {
            samples: self.samples,
            growth: self.growth,
            continuations: self.continuations,
            deterministic: self.deterministic,
            particle_budget: self.particle_budget,
        }
    }

    pub fn inference(&self) -> InferenceOptions {
        InferenceOptions {
            samples: self.eval_samples.unwrap_or(self.samples),
            deterministic: self.deterministic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Greedy stage (1-based); 0 outside greedy training.
    pub stage: usize,
    /// Objective averaged over the epoch's training inputs.
    pub objective: ObjectiveBreakdown,
    /// Error of the particle predictive on the training inputs seen this epoch.
    pub train_error: f64,
    pub test_error: Option<f64>,
    pub info_plane: Vec<InfoPlanePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: ImbConfig,
    pub records: Vec<EpochRecord>,
    /// `(stage, first epoch)` for greedy training.
    pub stage_starts: Vec<(usize, usize)>,
    /// Snapshots at info-plane epochs and at the final epoch.
    pub checkpoints: Vec<(usize, NetworkParams)>,
    pub final_params: NetworkParams,
    pub wall_seconds: f64,
}

impl TrainLog {
    pub fn last_epoch(&self) -> usize {
        self.records.last().map_or(0, |r| r.epoch)
    }

    pub fn info_plane(&self) -> Vec<InfoPlanePoint> {
        self.records.iter().flat_map(|r| r.info_plane.iter().copied()).collect()
    }

    /// Per-epoch CSV: `epoch,stage,objective,nll,train_error,test_error,vcr_0..vcr_L,comp_1..comp_L`.
    pub fn write_epoch_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let depth = self.config.depth();
        let mut header = vec!["epoch", "stage", "objective", "nll", "train_error", "test_error"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        header.extend((0..=depth).map(|l| format!("vcr_{l}")));
        header.extend((1..=depth).map(|l| format!("comp_{l}")));
        writeln!(out, "{}", header.join(","))?;
        for r in &self.records {
            let test = r.test_error.map_or(String::new(), |e| format!("{e:.12}"));
            write!(
                out,
                "{},{},{:.12},{:.12},{:.12},{}",
                r.epoch,
                r.stage,
                r.objective.total,
                r.objective.nll(),
                r.train_error,
                test
            )?;
            for t in &r.objective.layers {
                write!(out, ",{:.12}", t.vcr)?;
            }
            for t in &r.objective.layers[1..] {
                write!(out, ",{:.12}", t.comp)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub samples: usize,
    pub deterministic: bool,
}

/// Monte-Carlo estimate of `p(yhat | x)` from `samples` independent paths.
pub fn predict_proba(params: &NetworkParams, x: &[f64], inf: &InferenceOptions, rng: &mut Stream) -> Vec<f64> {
    if inf.deterministic {
        return params.expectation_forward(x).expect("input shape checked by caller");
    }
    let mut mean = vec![0.0; params.n_classes()];
    let mut probs = vec![0.0; params.n_classes()];
    for _ in 0..inf.samples {
        let mut z = x.to_vec();
        for l in 1..=params.depth() {
            z = sample_layer(&params.layer_forward_unchecked(l, &z), rng);
        }
        softmax_into(&params.head_logits(&z), &mut probs);
        for (m, p) in mean.iter_mut().zip(&probs) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= inf.samples as f64);
    mean
}

/// Class decisions for every row, one inference stream per `(seed, repeat, row)`.
pub fn classify_rows(params: &NetworkParams, dataset: &Dataset, inf: &InferenceOptions, seed: u64, repeat: usize) -> Result<Vec<usize>> {
    ensure!(
        dataset.dim() == params.input_dim && dataset.n_classes == params.n_classes(),
        Contract,
        "dataset ({} inputs, {} classes) does not fit the network ({} inputs, {} classes)",
        dataset.dim(),
        dataset.n_classes,
        params.input_dim,
        params.n_classes()
    );
    params.validate()?;
    ensure!(inf.samples >= 1, Contract, "inference needs at least one sample");
    Ok((0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Purpose::Inference, &[repeat as u64, i as u64]);
            argmax(&predict_proba(params, dataset.input(i), inf, &mut rng))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    /// Sample standard deviation over repeats (0 for a single repeat).
    pub std: f64,
    pub per_repeat: Vec<f64>,
}

/// Classification error of the Monte-Carlo predictive, repeated with fresh streams.
pub fn evaluate(params: &NetworkParams, dataset: &Dataset, inf: &InferenceOptions, repeats: usize, seed: u64) -> Result<ErrorStats> {
    ensure!(repeats >= 1, Contract, "repeats must be >= 1");
    let mut per_repeat = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let decisions = classify_rows(params, dataset, inf, seed, r)?;
        let wrong = decisions.iter().zip(&dataset.labels).filter(|(a, b)| a != b).count();
        per_repeat.push(wrong as f64 / dataset.len() as f64);
    }
    let mean = per_repeat.iter().sum::<f64>() / repeats as f64;
    let std = if repeats > 1 {
        (per_repeat.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(ErrorStats { mean, std, per_repeat })
}

struct Trainer<'a> {
    train: &'a Dataset,
    test: Option<&'a Dataset>,
    cfg: &'a ImbConfig,
    params: NetworkParams,
    batches: Batches,
    budget: EnumerationBudget,
    mi_enabled: bool,
    records: Vec<EpochRecord>,
    checkpoints: Vec<(usize, NetworkParams)>,
}

impl<'a> Trainer<'a> {
    fn new(train: &'a Dataset, test: Option<&'a Dataset>, cfg: &'a ImbConfig) -> Result<Self> {
        cfg.validate()?;
        train.validate()?;
        if let Some(t) = test {
            ensure!(
                t.dim() == train.dim() && t.n_classes == train.n_classes,
                Contract,
                "test set shape does not match the training set"
            );
        }
        let mut rng = stream(cfg.seed, Purpose::Init, &[]);
        let params = NetworkParams::init(train.dim(), &cfg.hidden_widths, train.n_classes, &mut rng);
        let budget = EnumerationBudget::default();
        let mut mi_enabled = cfg.mi_eval_every > 0;
        if mi_enabled {
            match &train.joint {
                None => {
                    log::warn!("information-plane logging skipped: the dataset has no enumerated joint");
                    mi_enabled = false;
                }
                Some(joint) => {
                    if let Err(e) = budget.check(&params, joint.inputs.len()) {
                        log::warn!("information-plane logging skipped: {e}");
                        mi_enabled = false;
                    }
                }
            }
        }
        Ok(Trainer {
            train,
            test,
            cfg,
            params,
            batches: Batches::new(train.len(), cfg.batch_size, cfg.seed)?,
            budget,
            mi_enabled,
            records: Vec::new(),
            checkpoints: Vec::new(),
        })
    }

    fn clouds(&self, rows: &[usize], epoch: usize) -> Result<Vec<ParticleCloud>> {
        let opts = self.cfg.growth_options();
        rows.par_iter()
            .map(|&i| {
                let mut rng = stream(self.cfg.seed, Purpose::Particles, &[epoch as u64, i as u64]);
                grow_particles(&self.params, self.train.input(i), &opts, &mut rng)
            })
            .collect()
    }

    fn snapshot_due(&self, epoch: usize, last: bool) -> bool {
        last || (self.cfg.mi_eval_every > 0 && epoch % self.cfg.mi_eval_every == 0)
    }

    fn eval_due(&self, epoch: usize, last: bool) -> bool {
        last || epoch == 0 || (self.cfg.eval_every > 0 && epoch % self.cfg.eval_every == 0)
    }

    fn record(&mut self, epoch: usize, stage: usize, objective: ObjectiveBreakdown, train_error: f64, last: bool) -> Result<()> {
        let test_error = match self.test {
            Some(t) if !t.is_empty() && self.eval_due(epoch, last) => {
                let seed = derive_seed(self.cfg.seed, Purpose::Inference, &[epoch as u64]);
                Some(evaluate(&self.params, t, &self.cfg.inference(), 1, seed)?.mean)
            }
            _ => None,
        };
        let mut info_plane = Vec::new();
        if self.snapshot_due(epoch, last) {
            if self.mi_enabled {
                let joint = self.train.joint.as_ref().expect("checked at start");
                info_plane = info_plane_points(&self.params, joint, epoch, &self.budget)?;
            }
            if self.checkpoints.last().map(|c| c.0) != Some(epoch) {
                self.checkpoints.push((epoch, self.params.clone()));
            }
        }
        let level = if test_error.is_some() || !info_plane.is_empty() { log::Level::Info } else { log::Level::Debug };
        log::log!(
            level,
            "epoch {epoch} stage {stage}: objective {:.6} nll {:.6} train error {:.4}{}",
            objective.total,
            objective.nll(),
            train_error,
            test_error.map_or(String::new(), |e| format!(" test error {e:.4}"))
        );
        self.records.push(EpochRecord {
            epoch,
            stage,
            objective,
            train_error,
            test_error,
            info_plane,
        });
        Ok(())
    }

    /// Objective of the initial parameters over the whole training set.
    fn initial_record(&mut self, weights: &ObjectiveWeights, last: bool) -> Result<()> {
        let rows: Vec<usize> = (0..self.train.len()).collect();
        let clouds = self.clouds(&rows, 0)?;
        let pass = backward_pass(&self.params, &clouds, &self.train.labels, weights)?;
        let err = 1.0 - pass.correct as f64 / rows.len() as f64;
        self.record(0, 0, pass.breakdown, err, last)
    }

    fn run_epochs(
        &mut self,
        weights: &ObjectiveWeights,
        frozen: Option<&[bool]>,
        first: usize,
        count: usize,
        stage: usize,
        final_stage: bool,
    ) -> Result<()> {
        let mut opt_state = OptimizerState::new();
        let depth = self.params.depth();
        let mut totals: Vec<f64> = Vec::new();
        for epoch in first..first + count {
            let mut vcr = vec![0.0; depth + 1];
            let mut comp = vec![0.0; depth + 1];
            let mut correct = 0usize;
            for (b, rows) in self.batches.epoch(epoch).into_iter().enumerate() {
                let clouds = self.clouds(&rows, epoch)?;
                let labels: Vec<usize> = rows.iter().map(|&i| self.train.labels[i]).collect();
                let pass = backward_pass(&self.params, &clouds, &labels, weights)?;
                let n = rows.len() as f64;
                for (l, t) in pass.breakdown.layers.iter().enumerate() {
                    vcr[l] += t.vcr * n;
                    comp[l] += t.comp * n;
                }
                correct += pass.correct;
                optimizer_step(&mut self.params, &pass.grads, &mut opt_state, &self.cfg.optimizer, frozen).map_err(|e| match e {
                    ImbError::Numeric(m) => ImbError::Numeric(format!("epoch {epoch}, batch {b}: {m}")),
                    other => other,
                })?;
            }
            let n = self.train.len() as f64;
            vcr.iter_mut().for_each(|v| *v /= n);
            comp.iter_mut().for_each(|c| *c /= n);
            let objective = ObjectiveBreakdown::assemble(&vcr, &comp, weights);
            totals.push(objective.total);
            let mut last = final_stage && epoch + 1 == first + count;
            let stop = self.cfg.early_stop && converged(&totals);
            if stop && final_stage {
                last = true;
            }
            self.record(epoch, stage, objective, 1.0 - correct as f64 / n, last)?;
            if stop {
                log::info!("early stop at epoch {epoch}: objective moving average has flattened");
                if !final_stage && self.checkpoints.last().map(|c| c.0) != Some(epoch) {
                    self.checkpoints.push((epoch, self.params.clone()));
                }
                break;
            }
        }
        Ok(())
    }

    fn finish(self, stage_starts: Vec<(usize, usize)>, started: Instant) -> TrainLog {
        let mut checkpoints = self.checkpoints;
        let last = self.records.last().map_or(0, |r| r.epoch);
        if checkpoints.last().map(|c| c.0) != Some(last) {
            checkpoints.push((last, self.params.clone()));
        }
        TrainLog {
            config: self.cfg.clone(),
            records: self.records,
            stage_starts,
            checkpoints,
            final_params: self.params,
            wall_seconds: started.elapsed().as_secs_f64(),
        }
    }
}

const MOVING_WINDOW: usize = 100;

fn converged(totals: &[f64]) -> bool {
    let n = totals.len();
    if n < 2 * MOVING_WINDOW {
        return false;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let now = mean(&totals[n - MOVING_WINDOW..]);
    let before = mean(&totals[n - 2 * MOVING_WINDOW..n - MOVING_WINDOW]);
    before - now < 1e-6
}

fn train_single_stage(train: &Dataset, test: Option<&Dataset>, cfg: &ImbConfig) -> Result<TrainLog> {
    let started = Instant::now();
    let mut trainer = Trainer::new(train, test, cfg)?;
    let weights = cfg.weights()?;
    trainer.initial_record(&weights, cfg.epochs == 0)?;
    trainer.run_epochs(&weights, None, 1, cfg.epochs, 0, true)?;
    Ok(trainer.finish(Vec::new(), started))
}

/// Minimizes the weighted sum of all layer objectives.
pub fn train_joint_imb(train: &Dataset, test: Option<&Dataset>, cfg: &ImbConfig) -> Result<TrainLog> {
    ensure!(cfg.algorithm == Algorithm::Joint, Contract, "train_joint_imb called with algorithm {}", cfg.algorithm);
    train_single_stage(train, test, cfg)
}

/// Minimizes the Monte-Carlo negative log-likelihood only.
pub fn train_mle(train: &Dataset, test: Option<&Dataset>, cfg: &ImbConfig) -> Result<TrainLog> {
    ensure!(cfg.algorithm == Algorithm::Mle, Contract, "train_mle called with algorithm {}", cfg.algorithm);
    train_single_stage(train, test, cfg)
}

/// Epochs of each greedy stage: `epochs / L`, remainder to the last stage.
pub fn greedy_stage_epochs(epochs: usize, depth: usize) -> Vec<usize> {
    let mut out = vec![epochs / depth; depth];
    out[depth - 1] += epochs % depth;
    out
}

/// Layer-by-layer training. Stage `s` optimizes the layer-`s` objective over
/// the encoder into layer `s` (with its marginal) and everything above it;
/// encoders below `s` stay frozen.
pub fn train_greedy_imb(train: &Dataset, test: Option<&Dataset>, cfg: &ImbConfig) -> Result<TrainLog> {
    ensure!(cfg.algorithm == Algorithm::Greedy, Contract, "train_greedy_imb called with algorithm {}", cfg.algorithm);
    let started = Instant::now();
    let mut trainer = Trainer::new(train, test, cfg)?;
    let base = cfg.weights()?;
    let depth = cfg.depth();
    trainer.initial_record(&base, cfg.epochs == 0)?;
    let mut stage_starts = Vec::new();
    let mut next = 1;
    let per_stage = greedy_stage_epochs(cfg.epochs, depth);
    for s in 1..=depth {
        let mut gammas = vec![0.0; depth + 1];
        gammas[s] = 1.0;
        let weights = ObjectiveWeights {
            gammas,
            betas: base.betas.clone(),
        };
        let n_tensors = 3 * depth + 2;
        let frozen: Vec<bool> = (0..n_tensors).map(|t| t < 3 * (s - 1)).collect();
        stage_starts.push((s, next));
        let before = trainer.records.len();
        trainer.run_epochs(&weights, Some(&frozen), next, per_stage[s - 1], s, s == depth)?;
        next += trainer.records.len() - before;
    }
    Ok(trainer.finish(stage_starts, started))
}

/// Dispatches on `cfg.algorithm`.
pub fn train(train: &Dataset, test: Option<&Dataset>, cfg: &ImbConfig) -> Result<TrainLog> {
    match cfg.algorithm {
        Algorithm::Joint => train_joint_imb(train, test, cfg),
        Algorithm::Greedy => train_greedy_imb(train, test, cfg),
        Algorithm::Mle => train_mle(train, test, cfg),
    }
}
