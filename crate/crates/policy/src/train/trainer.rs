use std::io::Write;
use std::time::Instant;

use mres_core::generate::{sample_instance, Distribution};
use mres_core::multires::{build_hierarchy, MultiresHierarchy};
use mres_core::Instance;
use mres_tensor::{adam_step, AdamConfig, AdamState};
use serde::{Deserialize, Serialize};

use crate::policy::Policy;
use crate::rng::derive_rng;
use crate::rollout::DecodeMode;
use crate::train::baseline::{mean_greedy_cost, Baseline, BaselineRegistry};
use crate::train::loss::{multires_loss_terms, GraphRole, LossWeights, StepKey, StepOutcome};
use crate::train::TrainConfig;
use crate::{PolicyError, Result};

const TAG_INSTANCE: u64 = 0x1751;
const TAG_HIERARCHY: u64 = 0x4e12;
const TAG_VALIDATION: u64 = 0x7a1d;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Zero-based index of the finished epoch.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub lr: f64,
    pub cost_original: f64,
    /// Mean sampled cost of sub-graph rollouts, if any were drawn.
    pub cost_sub: Option<f64>,
    pub cost_high: Option<f64>,
    /// Epoch means of the per-instance loss terms.
    pub loss_original: f64,
    pub loss_sub: f64,
    pub loss_high: f64,
    /// Always `loss_original + loss_sub + loss_high`.
    pub loss_estimate: f64,
    pub high_skipped: usize,
    /// Mean greedy cost of the updated policy on the validation set.
    pub val_cost: f64,
    /// Validation cost of the greedy-rollout baseline after the update.
    pub baseline_cost: Option<f64>,
    pub baseline_replaced: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

/// Owns the policy, optimizer and baseline of a run.
pub struct Trainer {
    cfg: TrainConfig,
    policy: Policy,
    adam: AdamState,
    baseline: Box<dyn Baseline>,
    val_set: Vec<Instance>,
    epoch: usize,
    record_time: bool,
}

/// The fixed validation set of a run.
pub fn validation_set(cfg: &TrainConfig) -> Result<Vec<Instance>> {
    let mut rng = derive_rng(cfg.seed, &[TAG_VALIDATION]);
    (0..cfg.val_size)
        .map(|_| Ok(sample_instance(cfg.problem, cfg.n, Distribution::Uniform, &mut rng)?))
        .collect()
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let policy = Policy::init(&cfg.model, cfg.seed)?;
        let adam = AdamState::for_params(policy.params().tensors());
        Self::from_parts(cfg, policy, adam, 0, None)
    }

    /// Reassembles a run, e.g. from a checkpoint. `baseline_state` restores
    /// the baseline; without it the baseline starts from `policy`.
    pub fn from_parts(
        cfg: TrainConfig,
        policy: Policy,
        adam: AdamState,
        epoch: usize,
        baseline_state: Option<Vec<(String, mres_tensor::Tensor)>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if policy.config() != &cfg.model {
            return Err(PolicyError::Mismatch("policy and training config disagree".into()));
        }
        let val_set = validation_set(&cfg)?;
        let mut baseline = BaselineRegistry::with_builtins().create(cfg.baseline.name(), &cfg, &policy, &val_set)?;
        if let Some(state) = baseline_state {
            baseline.restore(state)?;
        }
        Ok(Trainer {
            cfg,
            policy,
            adam,
            baseline,
            val_set,
            epoch,
            record_time: false,
        })
    }

    /// Include wall-clock seconds in the epoch stats (which makes logs
    /// differ between otherwise identical runs).
    pub fn record_time(mut self, on: bool) -> Self {
        self.record_time = on;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn baseline(&self) -> &dyn Baseline {
        self.baseline.as_ref()
    }

    pub fn val_set(&self) -> &[Instance] {
        &self.val_set
    }

    /// Epochs completed.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        self.cfg.lr * self.cfg.lr_decay.powi(epoch as i32)
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            sub: self.cfg.sub_weight,
            high: self.cfg.high_weight,
            literal_pairing: self.cfg.literal_pairing,
        }
    }

    /// The training instances of one step with their hierarchies.
    pub fn sample_batch(&self, epoch: usize, step: usize) -> Result<Vec<MultiresHierarchy>> {
        let cfg = &self.cfg;
        (0..cfg.batch_size)
            .map(|i| {
                let path = [epoch as u64, step as u64, i as u64];
                let mut rng = derive_rng(cfg.seed, &[TAG_INSTANCE, path[0], path[1], path[2]]);
                let inst = sample_instance(cfg.problem, cfg.n, Distribution::Uniform, &mut rng)?;
                let mut hrng = derive_rng(cfg.seed, &[TAG_HIERARCHY, path[0], path[1], path[2]]);
                Ok(build_hierarchy(&inst, cfg.clusters, cfg.levels, &mut hrng)?)
            })
            .collect()
    }

    /// Advantages and gradient of one step, without updating anything.
    pub fn step_terms(&self, epoch: usize, step: usize, mode: DecodeMode) -> Result<StepOutcome> {
        let batch = self.sample_batch(epoch, step)?;
        let key = StepKey {
            seed: self.cfg.seed,
            epoch: epoch as u64,
            step: step as u64,
        };
        multires_loss_terms(
            &self.policy,
            self.baseline.as_ref(),
            &batch,
            &self.weights(),
            key,
            mode,
            self.cfg.chunk_instances,
        )
    }

    /// Runs one epoch: `steps_per_epoch` Adam updates, then the baseline
    /// update.
    pub fn train_epoch(&mut self) -> Result<EpochStats> {
        let start = Instant::now();
        let epoch = self.epoch;
        let lr = self.lr_for_epoch(epoch);
        let adam_cfg = AdamConfig { lr, ..AdamConfig::default() };

        let mut acc = Accumulator::default();
        for step in 0..self.cfg.steps_per_epoch {
            let out = self.step_terms(epoch, step, DecodeMode::Sample)?;
            acc.add(&out);
            adam_step(self.policy.params_mut().tensors_mut(), &out.grads, &mut self.adam, &adam_cfg)?;
        }

        let val_cost = mean_greedy_cost(&self.policy, &self.val_set)?;
        let replaced = self.baseline.end_epoch(&self.policy, val_cost)?;
        self.epoch += 1;
        Ok(acc.finish(
            epoch,
            self.adam.step,
            lr,
            val_cost,
            self.baseline.val_cost(),
            replaced,
            self.record_time.then(|| start.elapsed().as_secs_f64()),
        ))
    }

    /// Trains until `cfg.epochs` epochs are complete, appending one JSON
    /// line per epoch to `log` and calling `after_epoch` after each.
    pub fn run(
        &mut self,
        mut log: Option<&mut dyn Write>,
        mut after_epoch: impl FnMut(&Trainer, &EpochStats) -> Result<()>,
    ) -> Result<Vec<EpochStats>> {
        let mut all = Vec::new();
        while self.epoch < self.cfg.epochs {
            let stats = self.train_epoch()?;
            log::info!(
                "epoch {}: cost {:.4}, val {:.4}, loss {:+.5}",
                stats.epoch,
                stats.cost_original,
                stats.val_cost,
                stats.loss_estimate
            );
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", serde_json::to_string(&stats)?)?;
                w.flush()?;
            }
            after_epoch(self, &stats)?;
            all.push(stats);
        }
        Ok(all)
    }
}

#[derive(Default)]
struct Accumulator {
    instances: usize,
    loss: [f64; 3],
    skipped: usize,
    cost_sum: [f64; 3],
    cost_count: [usize; 3],
}

impl Accumulator {
    fn add(&mut self, out: &StepOutcome) {
        for t in &out.instances {
            self.instances += 1;
            self.loss[0] += t.original;
            self.loss[1] += t.sub;
            self.loss[2] += t.high;
            self.skipped += usize::from(t.high_skipped);
        }
        for g in &out.graphs {
            let slot = match g.role {
                GraphRole::Original => 0,
                GraphRole::Sub(_) => 1,
                GraphRole::High(_) => 2,
            };
            self.cost_sum[slot] += g.costs.iter().sum::<f64>();
            self.cost_count[slot] += g.costs.len();
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        epoch: usize,
        step: u64,
        lr: f64,
        val_cost: f64,
        baseline_cost: Option<f64>,
        baseline_replaced: bool,
        wall_seconds: Option<f64>,
    ) -> EpochStats {
        let n = self.instances.max(1) as f64;
        let mean_cost = |i: usize| (self.cost_count[i] > 0).then(|| self.cost_sum[i] / self.cost_count[i] as f64);
        let loss = self.loss.map(|l| l / n);
        EpochStats {
            epoch,
            step,
            lr,
            cost_original: mean_cost(0).unwrap_or(f64::NAN),
            cost_sub: mean_cost(1),
            cost_high: mean_cost(2),
            loss_original: loss[0],
            loss_sub: loss[1],
            loss_high: loss[2],
            loss_estimate: loss[0] + loss[1] + loss[2],
            high_skipped: self.skipped,
            val_cost,
            baseline_cost,
            baseline_replaced,
            wall_seconds,
        }
    }
}
