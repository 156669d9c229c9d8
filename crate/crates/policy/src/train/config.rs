use mres_core::multires::MIN_LEVEL_NODES;
use mres_core::ProblemKind;
use serde::{Deserialize, Serialize};

use crate::params::ModelConfig;
use crate::{PolicyError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    GreedyRollout,
    PomoShared,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::GreedyRollout => "greedy_rollout",
            BaselineKind::PomoShared => "pomo_shared",
        }
    }
}

/// Everything that determines a training run. Two runs with equal configs
/// produce identical parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub problem: ProblemKind,
    /// Cities per training instance.
    pub n: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// Clusters per level.
    pub clusters: usize,
    /// Requested hierarchy depth, original included.
    pub levels: usize,
    pub lr: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub baseline: BaselineKind,
    pub pomo_starts: usize,
    /// Instances in the fixed validation set.
    pub val_size: usize,
    /// Scale of the sub-graph term; 0 together with `high_weight = 0`
    /// gives plain single-level REINFORCE.
    pub sub_weight: f64,
    pub high_weight: f64,
    /// Pair the combined advantage with the original graph's log-likelihood
    /// only, instead of giving each graph its own advantage.
    pub literal_pairing: bool,
    pub seed: u64,
    /// Instances per packed batch; fixed so results do not depend on the
    /// number of threads.
    pub chunk_instances: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            problem: ProblemKind::Tsp,
            n: 20,
            epochs: 50,
            steps_per_epoch: 250,
            batch_size: 64,
            clusters: 5,
            levels: 2,
            lr: 1e-4,
            lr_decay: 1.0,
            baseline: BaselineKind::GreedyRollout,
            pomo_starts: 8,
            val_size: 256,
            sub_weight: 1.0,
            high_weight: 1.0,
            literal_pairing: false,
            seed: 1234,
            chunk_instances: 16,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The configuration of the "w/o multiresolution" ablation.
    pub fn without_multiresolution(mut self) -> Self {
        self.sub_weight = 0.0;
        self.high_weight = 0.0;
        self
    }

    pub fn multiresolution(&self) -> bool {
        self.sub_weight != 0.0 || self.high_weight != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PolicyError::InvalidArgument(msg));
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.chunk_instances == 0 {
            return bad("batch_size, steps_per_epoch and chunk_instances must be positive".into());
        }
        if self.clusters < MIN_LEVEL_NODES {
            return bad(format!("clusters must be at least {}, got {}", MIN_LEVEL_NODES, self.clusters));
        }
        if self.levels < 2 {
            return bad(format!("levels must be at least 2, got {}", self.levels));
        }
        if self.n < self.clusters {
            return bad(format!("n = {} is smaller than clusters = {}", self.n, self.clusters));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad(format!("lr_decay must be positive, got {}", self.lr_decay));
        }
        for (name, w) in [("sub_weight", self.sub_weight), ("high_weight", self.high_weight)] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{} must be finite and non-negative, got {}", name, w));
            }
        }
        if self.val_size == 0 {
            return bad("val_size must be positive".into());
        }
        if self.baseline == BaselineKind::PomoShared && (self.pomo_starts == 0 || self.pomo_starts > self.n) {
            return bad(format!("pomo_starts must lie in 1..={}, got {}", self.n, self.pomo_starts));
        }
        if self.model.problem != self.problem {
            return bad(format!(
                "model is for {:?} but training targets {:?}",
                self.model.problem, self.problem
            ));
        }
        self.model.validate()
    }
}
