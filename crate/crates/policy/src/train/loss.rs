//! Rollouts and advantages for every graph of a multiresolution batch.

use mres_core::multires::MultiresHierarchy;
use mres_core::{Instance, ProblemKind};
use mres_tensor::Tensor;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::policy::Policy;
use crate::rng::derive_rng;
use crate::rollout::{DecodeMode, Rollout};
use crate::train::baseline::{advantage, pomo_start_nodes, shared_advantages, Baseline};
use crate::{PolicyError, Result};

const TAG_ROLLOUT: u64 = 0x5201;
const HIGH_ROLE_BASE: u64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "role", content = "index")]
pub enum GraphRole {
    Original,
    Sub(usize),
    High(usize),
}

impl GraphRole {
    fn code(self) -> u64 {
        match self {
            GraphRole::Original => 0,
            GraphRole::Sub(k) => 1 + k as u64,
            GraphRole::High(l) => HIGH_ROLE_BASE + l as u64,
        }
    }
}

/// How the batch loss is assembled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub sub: f64,
    pub high: f64,
    /// Use the combined advantage with the original graph's likelihood only.
    pub literal_pairing: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            sub: 1.0,
            high: 1.0,
            literal_pairing: false,
        }
    }
}

/// Identifies the random streams of one training step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepKey {
    pub seed: u64,
    pub epoch: u64,
    pub step: u64,
}

/// Rollout costs of one graph and the baseline they were compared with.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphTerm {
    pub instance: usize,
    pub role: GraphRole,
    /// Factor of this graph's advantage in the instance loss.
    pub coef: f64,
    pub costs: Vec<f64>,
    pub baselines: Vec<f64>,
}

impl GraphTerm {
    /// Mean advantage over this graph's rollouts.
    pub fn advantage(&self) -> f64 {
        let s: f64 = self.costs.iter().zip(&self.baselines).map(|(&c, &b)| advantage(c, b)).sum();
        s / self.costs.len() as f64
    }
}

/// Loss decomposition of one batch instance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct InstanceTerms {
    pub original: f64,
    /// Weighted mean of the sub-graph advantages.
    pub sub: f64,
    /// Weighted mean of the high-level advantages.
    pub high: f64,
    /// No high-level graph was available (degenerate coarsening).
    pub high_skipped: bool,
}

impl InstanceTerms {
    pub fn total(&self) -> f64 {
        self.original + self.sub + self.high
    }
}

pub struct StepOutcome {
    pub instances: Vec<InstanceTerms>,
    pub graphs: Vec<GraphTerm>,
    /// Gradient of the batch objective for every parameter tensor.
    pub grads: Vec<Tensor>,
    /// `sum_r w_r log p(rollout_r)`, whose gradient is `grads`.
    pub objective: f64,
}

/// Whether a graph admits more than one distinct solution length. Smaller
/// graphs have advantage zero under any baseline and are skipped.
pub fn trainable_graph(g: &Instance) -> bool {
    match g.kind() {
        ProblemKind::Tsp => g.n() >= 4,
        ProblemKind::Cvrp => g.cities().count() >= 3,
    }
}

struct Job<'h> {
    instance: usize,
    role: GraphRole,
    graph: &'h Instance,
    coef: f64,
    starts: Vec<Option<usize>>,
}

fn plan_jobs<'h>(
    hierarchies: &'h [MultiresHierarchy],
    baseline: &dyn Baseline,
    weights: &LossWeights,
) -> (Vec<Job<'h>>, Vec<bool>) {
    let mut jobs = Vec::new();
    let mut skipped = vec![false; hierarchies.len()];
    for (i, h) in hierarchies.iter().enumerate() {
        let mut push = |role, graph: &'h Instance, coef| {
            jobs.push(Job {
                instance: i,
                role,
                graph,
                coef,
                starts: baseline.starts(graph),
            })
        };
        push(GraphRole::Original, h.original(), 1.0);
        if weights.sub != 0.0 {
            let subs = h.sub_instances();
            let coef = weights.sub / subs.len() as f64;
            for (k, sg) in subs.iter().enumerate() {
                if let Some(g) = sg.instance.as_ref().filter(|g| trainable_graph(g)) {
                    push(GraphRole::Sub(k), g, coef);
                }
            }
        }
        if weights.high != 0.0 {
            let highs = h.high_level_instances();
            if highs.is_empty() {
                log::debug!(
                    "instance {}: no high-level graph ({})",
                    i,
                    h.degenerate().unwrap_or("hierarchy too shallow")
                );
                skipped[i] = true;
            }
            let coef = weights.high / highs.len().max(1) as f64;
            for (l, g) in highs.into_iter().enumerate() {
                if trainable_graph(g) {
                    push(GraphRole::High(l), g, coef);
                }
            }
        }
    }
    (jobs, skipped)
}

/// Per-rollout gradient weights for the jobs of whole instances.
fn rollout_weights(jobs: &[Job], terms: &[GraphTerm], weights: &LossWeights, batch: usize) -> Vec<f64> {
    let b = batch as f64;
    let mut out = Vec::new();
    if !weights.literal_pairing {
        for t in terms {
            let r = t.costs.len() as f64;
            for (&c, &bl) in t.costs.iter().zip(&t.baselines) {
                out.push(t.coef * advantage(c, bl) / (b * r));
            }
        }
        return out;
    }
    // Every instance's extra terms ride on its original rollouts.
    for (j, t) in terms.iter().enumerate() {
        let r = t.costs.len() as f64;
        if t.role != GraphRole::Original {
            out.extend(std::iter::repeat_n(0.0, t.costs.len()));
            continue;
        }
        let extra: f64 = terms
            .iter()
            .zip(jobs)
            .filter(|(u, job)| job.instance == jobs[j].instance && u.role != GraphRole::Original)
            .map(|(u, _)| u.coef * u.advantage())
            .sum();
        for (&c, &bl) in t.costs.iter().zip(&t.baselines) {
            out.push((t.coef * advantage(c, bl) + extra) / (b * r));
        }
    }
    out
}

fn run_chunk(
    policy: &Policy,
    baseline: &dyn Baseline,
    jobs: &[Job],
    weights: &LossWeights,
    batch: usize,
    key: StepKey,
    mode: DecodeMode,
) -> Result<(Vec<GraphTerm>, f64, Vec<Tensor>)> {
    let mut graphs = Vec::new();
    let mut firsts = Vec::new();
    let mut rngs: Vec<ChaCha8Rng> = Vec::new();
    for job in jobs {
        for (r, &f) in job.starts.iter().enumerate() {
            graphs.push(job.graph);
            firsts.push(f);
            rngs.push(derive_rng(
                key.seed,
                &[TAG_ROLLOUT, key.epoch, key.step, job.instance as u64, job.role.code(), r as u64],
            ));
        }
    }
    let rng_refs: Vec<&mut dyn RngCore> = rngs.iter_mut().map(|r| r as &mut dyn RngCore).collect();
    let mut terms = Vec::new();
    let (_, objective, grads) = policy.rollout_and_grad(&graphs, mode, &firsts, rng_refs, |rollouts: &[Rollout]| {
        let mut costs = Vec::with_capacity(jobs.len());
        let mut at = 0;
        for job in jobs {
            let n = job.starts.len();
            costs.push(rollouts[at..at + n].iter().map(|r| r.cost).collect::<Vec<f64>>());
            at += n;
        }
        let job_graphs: Vec<&Instance> = jobs.iter().map(|j| j.graph).collect();
        let refs = baseline.reference_costs(&job_graphs, &costs)?;
        terms = jobs
            .iter()
            .zip(costs)
            .zip(refs)
            .map(|((job, costs), baselines)| GraphTerm {
                instance: job.instance,
                role: job.role,
                coef: job.coef,
                costs,
                baselines,
            })
            .collect();
        Ok(rollout_weights(jobs, &terms, weights, batch))
    })?;
    Ok((terms, objective, grads))
}

/// Rolls out every graph of every hierarchy (original, sub-graphs, coarse
/// levels), compares each with `baseline`, and returns the advantages and
/// the gradient of the batch objective.
///
/// The original graph has weight 1, the sub-graphs `sub / K` and the coarse
/// levels `high / (L - 1)`. Instances are processed in chunks of
/// `chunk_instances`, in parallel, with the gradients summed in chunk order.
#[allow(clippy::too_many_arguments)]
pub fn multires_loss_terms(
    policy: &Policy,
    baseline: &dyn Baseline,
    hierarchies: &[MultiresHierarchy],
    weights: &LossWeights,
    key: StepKey,
    mode: DecodeMode,
    chunk_instances: usize,
) -> Result<StepOutcome> {
    if hierarchies.is_empty() || chunk_instances == 0 {
        return Err(PolicyError::invalid("empty batch or zero chunk size"));
    }
    let batch = hierarchies.len();
    let (jobs, skipped) = plan_jobs(hierarchies, baseline, weights);
    let mut bounds = vec![0];
    for (j, job) in jobs.iter().enumerate() {
        if j > 0 && job.instance % chunk_instances == 0 && job.instance != jobs[j - 1].instance {
            bounds.push(j);
        }
    }
    bounds.push(jobs.len());
    let chunks: Vec<&[Job]> = bounds.windows(2).map(|w| &jobs[w[0]..w[1]]).collect();
    let results: Vec<Result<(Vec<GraphTerm>, f64, Vec<Tensor>)>> = chunks
        .par_iter()
        .map(|c| run_chunk(policy, baseline, c, weights, batch, key, mode))
        .collect();

    let mut graphs = Vec::with_capacity(jobs.len());
    let mut grads: Option<Vec<Tensor>> = None;
    let mut objective = 0.0;
    for r in results {
        let (terms, obj, g) = r?;
        graphs.extend(terms);
        objective += obj;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.add_assign(b)?;
                }
            }
        }
    }
    let mut instances: Vec<InstanceTerms> = skipped
        .iter()
        .map(|&s| InstanceTerms {
            high_skipped: s,
            ..InstanceTerms::default()
        })
        .collect();
    for t in &graphs {
        let term = &mut instances[t.instance];
        let a = t.coef * t.advantage();
        match t.role {
            GraphRole::Original => term.original += a,
            GraphRole::Sub(_) => term.sub += a,
            GraphRole::High(_) => term.high += a,
        }
    }
    Ok(StepOutcome {
        instances,
        graphs,
        grads: grads.expect("at least one chunk"),
        objective,
    })
}

/// Multi-start rollouts of one instance and their shared-mean advantages.
#[derive(Clone, Debug)]
pub struct PomoOutcome {
    pub rollouts: Vec<Rollout>,
    pub costs: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Samples one rollout per forced first node (the first `starts` cities)
/// and returns `cost_i - mean(costs)` for each.
pub fn pomo_rollouts(
    policy: &Policy,
    inst: &Instance,
    starts: usize,
    rng: &mut dyn RngCore,
) -> Result<PomoOutcome> {
    let cities = inst.cities().count();
    if starts == 0 || starts > cities {
        return Err(PolicyError::invalid(format!(
            "{} starts for {} cities",
            starts, cities
        )));
    }
    let firsts: Vec<Option<usize>> = pomo_start_nodes(inst, starts).into_iter().map(Some).collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..starts).map(|_| ChaCha8Rng::seed_from_u64(rng.next_u64())).collect();
    let refs: Vec<&mut dyn RngCore> = rngs.iter_mut().map(|r| r as &mut dyn RngCore).collect();
    let insts = vec![inst; starts];
    let rollouts = policy.batch(&insts, DecodeMode::Sample, &firsts, refs)?;
    let costs: Vec<f64> = rollouts.iter().map(|r| r.cost).collect();
    let advantages = shared_advantages(&costs);
    Ok(PomoOutcome {
        rollouts,
        costs,
        advantages,
    })
}
