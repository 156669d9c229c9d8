use mres_core::{CvrpSolution, Instance, Solution, Tour};
use mres_tensor::{Tape, Tensor, Var};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::decode::{actions_from_routes, routes_from_actions, DecodeState};
use crate::features::InvariantFeatures;
use crate::model::{encode, prepare_decoder, step_probs};
use crate::params::PolicyParams;
use crate::{PolicyError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// A complete decoded solution.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// Every node chosen, in order; for CVRP depot returns appear inline
    /// and the final return is implicit.
    pub actions: Vec<usize>,
    pub solution: Solution,
    pub cost: f64,
    /// Sum of log-probabilities of the policy's own decisions. Forced
    /// moves contribute exactly zero.
    pub log_prob: f64,
}

/// How each graph of a batch picks its next move.
pub(crate) enum Chooser<'r> {
    Greedy,
    /// One generator per graph.
    Sample(Vec<&'r mut dyn RngCore>),
    /// Replays the given action sequence of each graph.
    Teacher(Vec<&'r [usize]>),
}

/// Decoded batch; the probability of every non-forced decision stays on
/// the tape so weighted log-likelihoods can be differentiated afterwards.
pub(crate) struct BatchRollout {
    pub actions: Vec<Vec<usize>>,
    pub log_probs: Vec<f64>,
    picks: Vec<Var>,
    owners: Vec<usize>,
}

impl BatchRollout {
    /// `sum_g weights[g] * log p(actions_g)` as a tape scalar, or `None`
    /// when no graph made a free decision.
    pub fn weighted_log_prob(&self, tape: &mut Tape<'_>, weights: &[f64]) -> Result<Option<Var>> {
        if self.picks.is_empty() {
            return Ok(None);
        }
        let p = tape.concat(&self.picks)?;
        let lp = tape.log(p)?;
        let w = self.owners.iter().map(|&g| weights[g]).collect();
        let w = tape.constant(Tensor::row(w));
        let weighted = tape.mul(lp, w)?;
        Ok(Some(tape.sum(weighted)?))
    }
}

/// Highest probability, lowest index on exact ties.
pub(crate) fn argmax(p: &[f64], mask: &[bool]) -> usize {
    let mut best = usize::MAX;
    let mut best_p = f64::NEG_INFINITY;
    for (j, (&pj, &m)) in p.iter().zip(mask).enumerate() {
        if !m && pj > best_p {
            best_p = pj;
            best = j;
        }
    }
    best
}

fn sample_index(p: &[f64], mask: &[bool], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = usize::MAX;
    for (j, (&pj, &m)) in p.iter().zip(mask).enumerate() {
        if m {
            continue;
        }
        acc += pj;
        last = j;
        if u < acc {
            return j;
        }
    }
    last
}

/// Decodes a batch of instances in lockstep on `tape`. `forced_first[g]`
/// fixes graph `g`'s first move and excludes it from the log-probability.
pub(crate) fn run_batch(
    tape: &mut Tape<'_>,
    params: &PolicyParams,
    v: &[Var],
    insts: &[&Instance],
    feats: &[&InvariantFeatures],
    mut chooser: Chooser<'_>,
    forced_first: &[Option<usize>],
) -> Result<BatchRollout> {
    let g_n = insts.len();
    if feats.len() != g_n || forced_first.len() != g_n {
        return Err(PolicyError::invalid("batch inputs differ in length"));
    }
    match &chooser {
        Chooser::Sample(r) if r.len() != g_n => {
            return Err(PolicyError::invalid("one generator per instance required"))
        }
        Chooser::Teacher(t) if t.len() != g_n => {
            return Err(PolicyError::invalid("one action sequence per instance required"))
        }
        _ => {}
    }
    let mut out = BatchRollout {
        actions: insts.iter().map(|i| Vec::with_capacity(i.n() + 4)).collect(),
        log_probs: vec![0.0; g_n],
        picks: Vec::new(),
        owners: Vec::new(),
    };
    if g_n == 0 {
        return Ok(out);
    }
    let enc = encode(tape, params, v, feats)?;
    let dec = prepare_decoder(tape, params, v, &enc)?;
    let mut states: Vec<DecodeState> = insts.iter().map(|i| DecodeState::new(i)).collect();
    let mut masks: Vec<Vec<bool>> = vec![Vec::new(); g_n];

    loop {
        let mut free = Vec::new();
        let mut any = false;
        for g in 0..g_n {
            if states[g].done() {
                continue;
            }
            any = true;
            let mask = states[g].mask(insts[g]);
            let step = out.actions[g].len();
            let open = mask.iter().filter(|&&m| !m).count();
            let forced = match forced_first[g] {
                Some(f) if step == 0 => {
                    if f >= mask.len() || mask[f] {
                        return Err(PolicyError::invalid(format!("cannot start at node {}", f)));
                    }
                    Some(f)
                }
                _ if open == 1 => mask.iter().position(|&m| !m),
                _ => None,
            };
            if let Chooser::Teacher(acts) = &chooser {
                let t = *acts[g].get(step).ok_or_else(|| {
                    PolicyError::Infeasible(format!("solution ends after {} moves", step))
                })?;
                let bad = match forced {
                    Some(a) => t != a,
                    None => t >= mask.len() || mask[t],
                };
                if bad {
                    return Err(PolicyError::Infeasible(format!(
                        "node {} is not allowed at move {}",
                        t, step
                    )));
                }
            }
            masks[g] = mask;
            match forced {
                Some(a) => {
                    states[g].apply(insts[g], a)?;
                    out.actions[g].push(a);
                }
                None => free.push(g),
            }
        }
        if !any {
            break;
        }
        if free.is_empty() {
            continue;
        }
        let probs = step_probs(tape, params, v, &dec, feats, &free, &states, &masks)?;
        for (&g, &pv) in free.iter().zip(&probs) {
            let p = tape.value(pv).data();
            let mask = &masks[g];
            let a = match &mut chooser {
                Chooser::Greedy => argmax(p, mask),
                Chooser::Sample(rngs) => sample_index(p, mask, rngs[g].gen::<f64>()),
                Chooser::Teacher(acts) => acts[g][out.actions[g].len()],
            };
            out.log_probs[g] += p[a].ln();
            let pick = tape.pick(pv, a)?;
            out.picks.push(pick);
            out.owners.push(g);
            states[g].apply(insts[g], a)?;
            out.actions[g].push(a);
        }
    }
    if let Chooser::Teacher(acts) = &chooser {
        for g in 0..g_n {
            if acts[g].len() != out.actions[g].len() {
                return Err(PolicyError::Infeasible(format!(
                    "solution has {} moves, decoding finished after {}",
                    acts[g].len(),
                    out.actions[g].len()
                )));
            }
        }
    }
    Ok(out)
}

pub(crate) fn solution_from_actions(inst: &Instance, actions: &[usize]) -> Solution {
    match inst.depot() {
        None => Solution::Tour(Tour(actions.to_vec())),
        Some(depot) => Solution::Routes(CvrpSolution::new(routes_from_actions(actions, depot))),
    }
}

/// The decoder action sequence for `solution`.
pub fn actions_for(inst: &Instance, solution: &Solution) -> Result<Vec<usize>> {
    match (solution, inst.depot()) {
        (Solution::Tour(t), None) => Ok(t.order().to_vec()),
        (Solution::Routes(r), Some(depot)) => {
            r.check_feasible(inst)?;
            Ok(actions_from_routes(&r.routes, depot))
        }
        _ => Err(PolicyError::invalid("solution kind does not match the instance")),
    }
}
