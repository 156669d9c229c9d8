//! The geometry-invariant attention policy, its multiresolution REINFORCE
//! trainer, evaluation and symmetry suites, and checkpoints.

pub mod checkpoint;
pub mod decode;
mod error;
pub mod eval;
pub mod features;
mod model;
pub mod params;
mod policy;
pub mod rng;
pub mod rollout;
pub mod train;

pub use checkpoint::Checkpoint;
pub use decode::DecodeState;
pub use error::PolicyError;
pub use features::{canonicalize, featurizer_by_name, Canonical, Featurizer, InvariantFeatures, RawCoordinates};
pub use params::{ModelConfig, PolicyParams};
pub use policy::{batch_ranges, Policy, PolicySolver, MAX_BATCH_GRAPHS, MAX_BATCH_PAIRS};
pub use rollout::{DecodeMode, Rollout};

pub type Result<T, E = PolicyError> = std::result::Result<T, E>;
