//! Evaluation across instance sizes and point distributions.

use mres_core::generate::{sample_instance, Distribution};
use mres_core::Instance;
use serde::{Deserialize, Serialize};

use super::{evaluate, EvalMode, Reference};
use crate::policy::Policy;
use crate::rng::derive_rng;
use crate::Result;

const TAG_CROSS: u64 = 0xc055;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossRow {
    pub n: usize,
    pub distribution: String,
    pub n_c: usize,
    pub instances: usize,
    pub mean_objective: f64,
    pub mean_reference: f64,
    pub mean_gap: f64,
}

fn dist_code(dist: &Distribution) -> [u64; 2] {
    match *dist {
        Distribution::Uniform => [0, 0],
        Distribution::Clustered { n_c } => [1, n_c as u64],
        Distribution::Mixed { n_c } => [2, n_c as u64],
    }
}

/// The test set of one table cell. Uniform sets ignore `n_c`, so every
/// uniform row of a table evaluates the same instances.
pub fn cross_dataset(policy: &Policy, n: usize, dist: Distribution, count: usize, seed: u64) -> Result<Vec<Instance>> {
    let [kind, n_c] = dist_code(&dist);
    let mut rng = derive_rng(seed, &[TAG_CROSS, n as u64, kind, n_c]);
    (0..count)
        .map(|_| Ok(sample_instance(policy.config().problem, n, dist, &mut rng)?))
        .collect()
}

/// One row per (size, distribution name, `n_c`), in that nesting order.
#[allow(clippy::too_many_arguments)]
pub fn cross_distribution_eval(
    policy: &Policy,
    sizes: &[usize],
    distributions: &[&str],
    n_c_values: &[usize],
    count: usize,
    mode: EvalMode,
    reference: Reference,
    seed: u64,
) -> Result<Vec<CrossRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        for &name in distributions {
            for &n_c in n_c_values {
                let dist = Distribution::parse(name, n_c)?;
                let set = cross_dataset(policy, n, dist, count, seed)?;
                let rep = evaluate(policy, &set, mode, reference, seed, false)?;
                rows.push(CrossRow {
                    n,
                    distribution: name.to_string(),
                    n_c,
                    instances: count,
                    mean_objective: rep.summary.mean_objective,
                    mean_reference: rep.summary.mean_reference,
                    mean_gap: rep.summary.mean_gap,
                });
            }
        }
    }
    Ok(rows)
}
