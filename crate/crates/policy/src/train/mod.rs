//! Multiresolution REINFORCE: every training instance contributes the
//! advantage of its own rollout plus those of its cluster sub-graphs and
//! coarsened levels.

mod baseline;
mod config;
mod loss;
mod trainer;

pub use baseline::{
    advantage, mean_greedy_cost, pomo_start_nodes, shared_advantages, Baseline, BaselineFactory,
    BaselineRegistry, GreedyRollout, PomoShared,
};
pub use config::{BaselineKind, TrainConfig};
pub use loss::{
    multires_loss_terms, pomo_rollouts, trainable_graph, GraphRole, GraphTerm, InstanceTerms, LossWeights,
    PomoOutcome, StepKey, StepOutcome,
};
pub use trainer::{validation_set, EpochStats, Trainer};
