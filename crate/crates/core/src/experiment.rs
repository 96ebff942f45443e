//! Dataset specifications and named experiment presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{gen_binary_task, load_csv, load_mnist_dir, split, Dataset, LabelRule, SplitRule};
use crate::error::{ensure, Result};
use crate::optim::OptimizerConfig;
use crate::particles::Growth;
use crate::training::{Algorithm, ImbConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Every `n_bits` pattern once; a seeded shuffle holds out `holdout_fraction`.
    Synthetic {
        #[serde(default = "twelve")]
        n_bits: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        labels: LabelRule,
        #[serde(default = "default_holdout")]
        holdout_fraction: f64,
    },
    /// IDX files in `dir`. With `holdout_fraction > 0` the tail of the training
    /// files replaces the official test files as the evaluation set.
    Mnist {
        dir: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
        #[serde(default)]
        holdout_fraction: f64,
    },
    /// `x_0,...,x_{d-1},y` files.
    Csv {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default)]
        n_classes: Option<usize>,
    },
}

fn twelve() -> usize {
    12
}
fn default_holdout() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

impl DatasetSpec {
    /// Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Splits> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        match self {
            DatasetSpec::Synthetic {
                n_bits,
                seed,
                labels,
                holdout_fraction,
            } => {
                let full = gen_binary_task(*seed, *n_bits, *labels)?;
                let (train, test) = split(&full, *holdout_fraction, SplitRule::Shuffled, *seed)?;
                Ok(Splits {
                    train,
                    test: (!test.is_empty()).then_some(test),
                })
            }
            DatasetSpec::Mnist {
                dir,
                train_limit,
                test_limit,
                holdout_fraction,
            } => {
                let dir = resolve(dir);
                ensure!(dir.is_dir(), Config, "dataset directory {} does not exist", dir.display());
                let mut full = load_mnist_dir(&dir, true)?;
                if let Some(n) = train_limit {
                    full = full.head(*n);
                }
                if *holdout_fraction > 0.0 {
                    let (train, hold) = split(&full, *holdout_fraction, SplitRule::Tail, 0)?;
                    return Ok(Splits {
                        train,
                        test: (!hold.is_empty()).then_some(hold),
                    });
                }
                let mut test = load_mnist_dir(&dir, false)?;
                if let Some(n) = test_limit {
                    test = test.head(*n);
                }
                Ok(Splits { train: full, test: Some(test) })
            }
            DatasetSpec::Csv { train, test, n_classes } => {
                let train = load_csv(resolve(train), *n_classes)?;
                let test = match test {
                    Some(p) => Some(load_csv(resolve(p), Some(train.n_classes))?),
                    None => None,
                };
                Ok(Splits { train, test })
            }
        }
    }

    /// Paths the spec reads, for existence checks before any work starts.
    pub fn paths(&self) -> Vec<PathBuf> {
        match self {
            DatasetSpec::Synthetic { .. } => Vec::new(),
            DatasetSpec::Mnist { dir, .. } => vec![dir.clone()],
            DatasetSpec::Csv { train, test, .. } => std::iter::once(train.clone()).chain(test.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub config: ImbConfig,
    pub dataset: DatasetSpec,
}

pub const PRESET_NAMES: [&str; 3] = ["toy-12bit", "mnist-512x512", "mnist-small"];

/// Directory holding the bundled 5000-image MNIST sample, relative to the repository root.
pub const BUNDLED_MNIST_DIR: &str = "data/mnist-5k";

/// Where `tools/fetch_mnist.sh` puts the full 60000/10000 MNIST files.
pub const FULL_MNIST_DIR: &str = "data/mnist";

pub fn preset(name: &str) -> Option<Preset> {
    match name {
        "toy-12bit" => Some(Preset {
            name: "toy-12bit",
            config: ImbConfig {
                betas: vec![1e-4],
                gammas: vec![1.0],
                samples: 8,
                growth: Growth::Chain,
                optimizer: OptimizerConfig::sgd(2.0),
                batch_size: 64,
                mi_eval_every: 50,
                eval_every: 50,
                algorithm: Algorithm::Joint,
                ..ImbConfig::new(vec![10, 8, 6, 4], 5000)
            },
            dataset: DatasetSpec::Synthetic {
                n_bits: 12,
                seed: 0,
                labels: LabelRule::Ranked,
                holdout_fraction: 0.2,
            },
        }),
        "mnist-512x512" => Some(Preset {
            name: "mnist-512x512",
            config: ImbConfig {
                samples: 32,
                optimizer: OptimizerConfig::adam(1e-3),
                batch_size: 100,
                eval_samples: Some(32),
                ..ImbConfig::new(vec![512, 512], 200)
            },
            dataset: DatasetSpec::Mnist {
                dir: PathBuf::from(FULL_MNIST_DIR),
                train_limit: None,
                test_limit: None,
                holdout_fraction: 1.0 / 6.0,
            },
        }),
        "mnist-small" => Some(Preset {
            name: "mnist-small",
            config: ImbConfig {
                samples: 8,
                optimizer: OptimizerConfig::adam(1e-3),
                batch_size: 100,
                eval_every: 0,
                ..ImbConfig::new(vec![128, 128], 20)
            },
            dataset: DatasetSpec::Mnist {
                dir: PathBuf::from(FULL_MNIST_DIR),
                train_limit: Some(10_000),
                test_limit: Some(10_000),
                holdout_fraction: 0.0,
            },
        }),
        _ => None,
    }
}
