use std::sync::Arc;

use mres_core::solvers::Solver;
use mres_core::{Instance, ProblemKind, Solution};
use mres_tensor::{Tape, Tensor};
use rand::RngCore;

use crate::decode::DecodeState;
use crate::features::{featurizer_by_name, Featurizer, InvariantFeatures};
use crate::model::{bind, encode, prepare_decoder, step_probs};
use crate::params::{ModelConfig, PolicyParams};
use crate::rollout::{actions_for, run_batch, solution_from_actions, Chooser, DecodeMode, Rollout};
use crate::{PolicyError, Result};

/// Parameters together with the featurizer their input layer expects.
#[derive(Clone, Debug)]
pub struct Policy {
    params: PolicyParams,
    featurizer: Arc<dyn Featurizer>,
}

impl PartialEq for Policy {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl Policy {
    pub fn new(params: PolicyParams) -> Result<Self> {
        let featurizer = featurizer_by_name(&params.config().featurizer)?;
        Ok(Policy { params, featurizer })
    }

    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::new(PolicyParams::init(config, seed)?)
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut PolicyParams {
        &mut self.params
    }

    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn featurizer(&self) -> &dyn Featurizer {
        self.featurizer.as_ref()
    }

    pub fn featurize(&self, inst: &Instance) -> Result<InvariantFeatures> {
        if inst.kind() != self.config().problem {
            return Err(PolicyError::invalid(format!(
                "policy for {:?} given a {:?} instance",
                self.config().problem,
                inst.kind()
            )));
        }
        self.featurizer.featurize(inst)
    }

    /// Node embeddings (`n x d`) and their mean (`1 x d`).
    pub fn encode(&self, inst: &Instance) -> Result<(Tensor, Tensor)> {
        let feats = self.featurize(inst)?;
        let mut tape = Tape::new();
        let v = bind(&mut tape, &self.params, false);
        let enc = encode(&mut tape, &self.params, &v, &[&feats])?;
        Ok((tape.value(enc.nodes).clone(), tape.value(enc.graphs).clone()))
    }

    /// Probabilities of the next move from `state`.
    pub fn decode_step(&self, inst: &Instance, state: &DecodeState) -> Result<Vec<f64>> {
        let feats = self.featurize(inst)?;
        let mask = state.mask(inst);
        if mask.iter().all(|&m| m) {
            return Err(PolicyError::invalid("no feasible move"));
        }
        let mut tape = Tape::new();
        let v = bind(&mut tape, &self.params, false);
        let enc = encode(&mut tape, &self.params, &v, &[&feats])?;
        let dec = prepare_decoder(&mut tape, &self.params, &v, &enc)?;
        let states = [state.clone()];
        let p = step_probs(&mut tape, &self.params, &v, &dec, &[&feats], &[0], &states, &[mask])?;
        Ok(tape.value(p[0]).data().to_vec())
    }

    fn finish(&self, inst: &Instance, actions: Vec<usize>, log_prob: f64) -> Result<Rollout> {
        let solution = solution_from_actions(inst, &actions);
        let cost = solution.length(inst)?;
        Ok(Rollout {
            actions,
            solution,
            cost,
            log_prob,
        })
    }

    fn featurize_all(&self, insts: &[&Instance]) -> Result<Vec<InvariantFeatures>> {
        insts.iter().map(|i| self.featurize(i)).collect()
    }

    /// Decodes one packed batch without recording gradients.
    fn run_chunk(
        &self,
        insts: &[&Instance],
        feats: &[&InvariantFeatures],
        chooser: Chooser<'_>,
        firsts: &[Option<usize>],
    ) -> Result<Vec<Rollout>> {
        let mut tape = Tape::new();
        let v = bind(&mut tape, &self.params, false);
        let r = run_batch(&mut tape, &self.params, &v, insts, feats, chooser, firsts)?;
        r.actions
            .into_iter()
            .zip(r.log_probs)
            .zip(insts)
            .map(|((a, lp), inst)| self.finish(inst, a, lp))
            .collect()
    }

    fn run_one(
        &self,
        inst: &Instance,
        feats: &InvariantFeatures,
        chooser: Chooser<'_>,
        first: Option<usize>,
    ) -> Result<Rollout> {
        Ok(self.run_chunk(&[inst], &[feats], chooser, &[first])?.remove(0))
    }

    pub fn rollout(&self, inst: &Instance, mode: DecodeMode, rng: &mut dyn RngCore) -> Result<Rollout> {
        let feats = self.featurize(inst)?;
        self.rollout_with(inst, &feats, mode, None, rng)
    }

    /// Rollout on precomputed features, optionally forcing the first move.
    pub fn rollout_with(
        &self,
        inst: &Instance,
        feats: &InvariantFeatures,
        mode: DecodeMode,
        first: Option<usize>,
        rng: &mut dyn RngCore,
    ) -> Result<Rollout> {
        let chooser = match mode {
            DecodeMode::Greedy => Chooser::Greedy,
            DecodeMode::Sample => Chooser::Sample(vec![rng]),
        };
        self.run_one(inst, feats, chooser, first)
    }

    pub fn greedy(&self, inst: &Instance) -> Result<Rollout> {
        let feats = self.featurize(inst)?;
        self.run_one(inst, &feats, Chooser::Greedy, None)
    }

    /// Greedy rollouts of many instances, decoded in packed batches.
    pub fn greedy_batch(&self, insts: &[&Instance]) -> Result<Vec<Rollout>> {
        let firsts = vec![None; insts.len()];
        self.batch(insts, DecodeMode::Greedy, &firsts, Vec::new())
    }

    /// Rollouts of many instances in packed batches. Sampling needs one
    /// generator per instance, each drawing one uniform per free decision,
    /// so the outcome does not depend on how the batch is split.
    pub fn batch(
        &self,
        insts: &[&Instance],
        mode: DecodeMode,
        firsts: &[Option<usize>],
        mut rngs: Vec<&mut dyn RngCore>,
    ) -> Result<Vec<Rollout>> {
        if firsts.len() != insts.len() || (mode == DecodeMode::Sample && rngs.len() != insts.len()) {
            return Err(PolicyError::invalid("batch inputs differ in length"));
        }
        let feats = self.featurize_all(insts)?;
        let sizes: Vec<usize> = insts.iter().map(|i| i.n()).collect();
        let mut out = Vec::with_capacity(insts.len());
        for range in batch_ranges(&sizes, MAX_BATCH_GRAPHS, MAX_BATCH_PAIRS) {
            let fr: Vec<&InvariantFeatures> = feats[range.clone()].iter().collect();
            let chooser = match mode {
                DecodeMode::Greedy => Chooser::Greedy,
                DecodeMode::Sample => Chooser::Sample(rngs.drain(..range.len()).collect()),
            };
            out.extend(self.run_chunk(&insts[range.clone()], &fr, chooser, &firsts[range])?);
        }
        Ok(out)
    }

    /// Teacher-forced log-probability of `solution`.
    pub fn log_prob(&self, inst: &Instance, solution: &Solution) -> Result<f64> {
        let actions = actions_for(inst, solution)?;
        self.log_prob_of_actions(inst, &actions)
    }

    pub fn log_prob_of_actions(&self, inst: &Instance, actions: &[usize]) -> Result<f64> {
        let feats = self.featurize(inst)?;
        Ok(self.run_one(inst, &feats, Chooser::Teacher(vec![actions]), None)?.log_prob)
    }

    /// Like [`Policy::log_prob_of_actions`] with the first move imposed
    /// rather than chosen, so it contributes nothing.
    pub fn log_prob_with_start(&self, inst: &Instance, actions: &[usize]) -> Result<f64> {
        let feats = self.featurize(inst)?;
        let first = actions.first().copied();
        Ok(self.run_one(inst, &feats, Chooser::Teacher(vec![actions]), first)?.log_prob)
    }

    /// Log-probability of an action sequence and its gradient with respect
    /// to every parameter tensor.
    pub fn log_prob_grad(&self, inst: &Instance, actions: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        let feats = self.featurize(inst)?;
        let mut tape = Tape::new();
        let v = bind(&mut tape, &self.params, true);
        let r = run_batch(
            &mut tape,
            &self.params,
            &v,
            &[inst],
            &[&feats],
            Chooser::Teacher(vec![actions]),
            &[None],
        )?;
        let Some(lp) = r.weighted_log_prob(&mut tape, &[1.0])? else {
            return Ok((0.0, zeros_like(self.params.tensors())));
        };
        let mut grads = tape.backward(lp)?;
        Ok((r.log_probs[0], collect_grads(&mut grads, &v, self.params.tensors())))
    }

    /// Gradient of `sum_g w_g log p(actions_g)` for given action sequences,
    /// with its value.
    pub fn weighted_log_prob_grad(
        &self,
        insts: &[&Instance],
        actions: &[&[usize]],
        firsts: &[Option<usize>],
        weights: &[f64],
    ) -> Result<(f64, Vec<Tensor>)> {
        if actions.len() != insts.len() || weights.len() != insts.len() {
            return Err(PolicyError::invalid("batch inputs differ in length"));
        }
        let feats = self.featurize_all(insts)?;
        let fr: Vec<&InvariantFeatures> = feats.iter().collect();
        let mut tape = Tape::new();
        let v = bind(&mut tape, &self.params, true);
        let chooser = Chooser::Teacher(actions.to_vec());
        let r = run_batch(&mut tape, &self.params, &v, insts, &fr, chooser, firsts)?;
        let value = weights.iter().zip(&r.log_probs).map(|(a, b)| a * b).sum();
        let Some(loss) = r.weighted_log_prob(&mut tape, weights)? else {
            return Ok((value, zeros_like(self.params.tensors())));
        };
        let mut grads = tape.backward(loss)?;
        Ok((value, collect_grads(&mut grads, &v, self.params.tensors())))
    }

    /// Decodes one packed batch and differentiates the weighted
    /// log-likelihood `sum_g w_g log p(actions_g)`, where `weights` sees the
    /// finished rollouts. Returns the rollouts, the objective value and its
    /// gradient for every parameter tensor. `rngs` is ignored when greedy.
    pub fn rollout_and_grad(
        &self,
        insts: &[&Instance],
        mode: DecodeMode,
        firsts: &[Option<usize>],
        rngs: Vec<&mut dyn RngCore>,
        weights: impl FnOnce(&[Rollout]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<Rollout>, f64, Vec<Tensor>)> {
        let feats = self.featurize_all(insts)?;
        let fr: Vec<&InvariantFeatures> = feats.iter().collect();
        let mut tape = Tape::new();
        let v = bind(&mut tape, &self.params, true);
        let chooser = match mode {
            DecodeMode::Greedy => Chooser::Greedy,
            DecodeMode::Sample => Chooser::Sample(rngs),
        };
        let r = run_batch(&mut tape, &self.params, &v, insts, &fr, chooser, firsts)?;
        let rollouts: Vec<Rollout> = r
            .actions
            .iter()
            .zip(&r.log_probs)
            .zip(insts)
            .map(|((a, &lp), inst)| self.finish(inst, a.clone(), lp))
            .collect::<Result<_>>()?;
        let w = weights(&rollouts)?;
        if w.len() != insts.len() {
            return Err(PolicyError::invalid("one weight per instance required"));
        }
        let objective: f64 = w.iter().zip(&r.log_probs).map(|(a, b)| a * b).sum();
        let Some(loss) = r.weighted_log_prob(&mut tape, &w)? else {
            return Ok((rollouts, objective, zeros_like(self.params.tensors())));
        };
        let mut grads = tape.backward(loss)?;
        Ok((rollouts, objective, collect_grads(&mut grads, &v, self.params.tensors())))
    }
}

/// Upper bounds on one packed batch: graphs, and summed squared sizes
/// (which drive the memory of the distance-bias terms).
pub const MAX_BATCH_GRAPHS: usize = 64;
pub const MAX_BATCH_PAIRS: usize = 100_000;

/// Splits consecutive items into ranges within both limits; an item that
/// alone exceeds `max_pairs` gets a range of its own.
pub fn batch_ranges(sizes: &[usize], max_graphs: usize, max_pairs: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut pairs = 0;
    for (i, &n) in sizes.iter().enumerate() {
        let p = n * n;
        if i > start && (i - start >= max_graphs || pairs + p > max_pairs) {
            out.push(start..i);
            start = i;
            pairs = 0;
        }
        pairs += p;
    }
    if start < sizes.len() {
        out.push(start..sizes.len());
    }
    out
}

pub(crate) fn zeros_like(ts: &[Tensor]) -> Vec<Tensor> {
    ts.iter().map(|t| Tensor::zeros(t.shape())).collect()
}

pub(crate) fn collect_grads(
    grads: &mut mres_tensor::Gradients,
    vars: &[mres_tensor::Var],
    like: &[Tensor],
) -> Vec<Tensor> {
    vars.iter()
        .zip(like)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect()
}

/// Greedy decoding exposed through the classical solver registry.
pub struct PolicySolver {
    policy: Policy,
}

impl PolicySolver {
    pub fn new(policy: Policy) -> Self {
        PolicySolver { policy }
    }
}

impl Solver for PolicySolver {
    fn name(&self) -> &str {
        "policy"
    }

    fn supports(&self, kind: ProblemKind) -> bool {
        kind == self.policy.config().problem
    }

    fn solve(&self, inst: &Instance) -> mres_core::Result<Solution> {
        self.policy
            .greedy(inst)
            .map(|r| r.solution)
            .map_err(|e| mres_core::CoreError::InvalidArgument(e.to_string()))
    }
}
