//! Greedy and best-of-sampling evaluation against exact or heuristic
//! reference objectives.

mod cross;
mod symmetry;

pub use cross::{cross_dataset, cross_distribution_eval, CrossRow};
pub use symmetry::{symmetry_suite, symmetry_transforms, SymmetryReport, SymmetryRow};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use mres_core::solvers::{reference_length, ReferenceKind};
use mres_core::Instance;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::policy::Policy;
use crate::rng::derive_rng;
use crate::rollout::{DecodeMode, Rollout};
use crate::{PolicyError, Result};

const TAG_SAMPLE: u64 = 0xe5a1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "samples")]
pub enum EvalMode {
    Greedy,
    /// Best of the greedy rollout and `count` sampled ones.
    Sample(usize),
}

impl EvalMode {
    pub fn label(&self) -> String {
        match self {
            EvalMode::Greedy => "greedy".into(),
            EvalMode::Sample(c) => format!("sample{}", c),
        }
    }
}

/// What gaps are measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    /// Held-Karp where the instance is small enough, else the heuristic.
    Exact,
    Heuristic,
}

impl std::str::FromStr for Reference {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heldkarp" | "exact" => Ok(Reference::Exact),
            "heuristic" => Ok(Reference::Heuristic),
            _ => Err(PolicyError::invalid(format!(
                "unknown reference {:?} (expected heldkarp or heuristic)",
                s
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub instance: usize,
    pub n: usize,
    pub mode: String,
    pub objective: f64,
    pub reference: f64,
    /// `exact` or `heuristic`.
    pub reference_kind: String,
    /// `objective / reference - 1`.
    pub gap: f64,
    /// Decode time, only when timing was requested.
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub instances: usize,
    pub mode: String,
    pub mean_objective: f64,
    pub mean_reference: f64,
    pub mean_gap: f64,
    pub max_gap: f64,
    pub total_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
}

impl EvalReport {
    fn from_rows(rows: Vec<EvalRow>, mode: EvalMode) -> Self {
        let n = rows.len() as f64;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let total_seconds = rows.iter().map(|r| r.seconds).sum::<Option<f64>>();
        let summary = EvalSummary {
            instances: rows.len(),
            mode: mode.label(),
            mean_objective: mean(|r| r.objective),
            mean_reference: mean(|r| r.reference),
            mean_gap: mean(|r| r.gap),
            max_gap: rows.iter().map(|r| r.gap).fold(f64::NEG_INFINITY, f64::max),
            total_seconds,
        };
        EvalReport { rows, summary }
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Per-instance rows to `path`, the aggregate as JSON next to it
    /// (`<path>.json`).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)?;
        let mut json = path.as_os_str().to_owned();
        json.push(".json");
        std::fs::write(json, serde_json::to_string_pretty(&self.summary)? + "\n")?;
        Ok(())
    }
}

/// The sampled candidate `j` of instance `i`; candidate streams nest, so the
/// first `c` candidates of `Sample(c + 1)` are those of `Sample(c)`.
pub fn sample_rng(seed: u64, instance: usize, j: usize) -> impl RngCore {
    derive_rng(seed, &[TAG_SAMPLE, instance as u64, j as u64])
}

/// Best rollout of `inst` under `mode`. Greedy wins ties.
pub fn best_rollout(policy: &Policy, inst: &Instance, index: usize, mode: EvalMode, seed: u64) -> Result<Rollout> {
    let mut best = policy.greedy(inst)?;
    if let EvalMode::Sample(count) = mode {
        let mut rngs: Vec<_> = (0..count).map(|j| sample_rng(seed, index, j)).collect();
        let refs: Vec<&Instance> = vec![inst; count];
        let firsts = vec![None; count];
        let dyn_rngs = rngs.iter_mut().map(|r| r as &mut dyn RngCore).collect();
        for r in policy.batch(&refs, DecodeMode::Sample, &firsts, dyn_rngs)? {
            if r.cost < best.cost {
                best = r;
            }
        }
    }
    Ok(best)
}

/// Evaluates `policy` on every instance of `dataset`. Instances are
/// independent and run in parallel; the report does not depend on the
/// thread count unless `timing` is on.
pub fn evaluate(
    policy: &Policy,
    dataset: &[Instance],
    mode: EvalMode,
    reference: Reference,
    seed: u64,
    timing: bool,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(PolicyError::invalid("empty evaluation set"));
    }
    if let EvalMode::Sample(0) = mode {
        return Err(PolicyError::invalid("sampling needs at least one sample"));
    }
    let rows = dataset
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let start = Instant::now();
            let best = best_rollout(policy, inst, i, mode, seed)?;
            let seconds = timing.then(|| start.elapsed().as_secs_f64());
            let (ref_len, kind) = reference_length(inst, reference == Reference::Exact)?;
            Ok(EvalRow {
                instance: i,
                n: inst.n(),
                mode: mode.label(),
                objective: best.cost,
                reference: ref_len,
                reference_kind: match kind {
                    ReferenceKind::Exact => "exact",
                    ReferenceKind::Heuristic => "heuristic",
                }
                .into(),
                gap: best.cost / ref_len - 1.0,
                seconds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(rows, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelConfig;
    use mres_core::generate::generate_uniform;
    use mres_core::ProblemKind;

    fn setup() -> (Policy, Vec<Instance>) {
        let policy = Policy::init(&ModelConfig::tiny(ProblemKind::Tsp), 3).unwrap();
        let mut rng = derive_rng(11, &[]);
        let set = (0..4).map(|_| generate_uniform(9, &mut rng).unwrap()).collect();
        (policy, set)
    }

    #[test]
    fn greedy_gaps_are_non_negative_against_the_optimum() {
        let (policy, set) = setup();
        let rep = evaluate(&policy, &set, EvalMode::Greedy, Reference::Exact, 0, false).unwrap();
        assert_eq!(rep.rows.len(), 4);
        for r in &rep.rows {
            assert_eq!(r.reference_kind, "exact");
            assert!(r.gap >= -1e-9);
            assert_eq!(r.objective, policy.greedy(&set[r.instance]).unwrap().cost);
            assert!(r.seconds.is_none());
        }
        assert!(rep.summary.total_seconds.is_none());
    }

    #[test]
    fn one_sample_is_the_better_of_greedy_and_one_seeded_rollout() {
        let (policy, set) = setup();
        let rep = evaluate(&policy, &set, EvalMode::Sample(1), Reference::Heuristic, 7, false).unwrap();
        for r in &rep.rows {
            let inst = &set[r.instance];
            let mut rng = sample_rng(7, r.instance, 0);
            let s = policy.rollout(inst, DecodeMode::Sample, &mut rng).unwrap();
            let g = policy.greedy(inst).unwrap();
            assert_eq!(r.objective, s.cost.min(g.cost));
        }
    }

    #[test]
    fn more_samples_never_hurt() {
        let (policy, set) = setup();
        let mut last = vec![f64::INFINITY; set.len()];
        for c in [1, 4, 16] {
            let rep = evaluate(&policy, &set, EvalMode::Sample(c), Reference::Heuristic, 2, false).unwrap();
            for r in &rep.rows {
                assert!(r.objective <= last[r.instance]);
                last[r.instance] = r.objective;
            }
        }
    }

    #[test]
    fn csv_round_trips() {
        let (policy, set) = setup();
        let rep = evaluate(&policy, &set, EvalMode::Greedy, Reference::Exact, 0, true).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let back: Vec<EvalRow> = csv::Reader::from_reader(&buf[..])
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .unwrap();
        assert_eq!(back, rep.rows);
    }

    #[test]
    fn empty_dataset_rejected() {
        let (policy, _) = setup();
        assert!(evaluate(&policy, &[], EvalMode::Greedy, Reference::Exact, 0, false).is_err());
    }
}
