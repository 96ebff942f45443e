//! Information multi-bottleneck training for binary stochastic networks.
//!
//! The crate covers the network model and particle sampling, Monte-Carlo
//! bottleneck objectives with surrogate gradients, exact information
//! measures for enumerable networks, dataset handling and an adversarial
//! robustness harness.

pub mod attack;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod gradient;
pub mod math;
pub mod net;
pub mod objectives;
pub mod optim;
pub mod particles;
pub mod probe;
pub mod rng;
pub mod training;

pub use data::{Dataset, LabelRule, Provenance, SplitRule};
pub use error::{ImbError, Result};
pub use exact::{EnumerationBudget, InfoPlanePoint, InputJoint};
pub use math::Matrix;
pub use net::{BernoulliVector, DenseLayer, Gradients, NetworkParams, StochasticLayer};
pub use objectives::{LayerTerms, ObjectiveBreakdown, ObjectiveWeights};
pub use particles::{Growth, GrowthOptions, ParticleCloud, ParticleRole};
pub use optim::{OptimizerConfig, OptimizerKind};
pub use training::{Algorithm, ImbConfig, InferenceOptions, TrainLog};
pub use attack::{AttackConfig, AttackMode};
pub use checkpoint::Checkpoint;
pub use experiment::{DatasetSpec, Preset};
