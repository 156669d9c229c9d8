//! Baselines subtracted from rollout costs, behind a common trait and
//! selected by name.

use mres_core::Instance;
use mres_tensor::Tensor;

use crate::params::PolicyParams;
use crate::policy::Policy;
use crate::train::{BaselineKind, TrainConfig};
use crate::{PolicyError, Result};

/// `cost - baseline_cost`; negative means better than the baseline and so
/// reinforced.
pub fn advantage(cost: f64, baseline_cost: f64) -> f64 {
    cost - baseline_cost
}

pub trait Baseline: Send + Sync {
    fn name(&self) -> &'static str;

    /// Forced first moves of the rollouts drawn for `graph`, one entry per
    /// rollout.
    fn starts(&self, graph: &Instance) -> Vec<Option<usize>>;

    /// Baseline cost of every rollout, given the rollout costs of each graph.
    fn reference_costs(&self, graphs: &[&Instance], costs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;

    /// End-of-epoch hook; returns whether the baseline changed.
    fn end_epoch(&mut self, candidate: &Policy, candidate_val_cost: f64) -> Result<bool>;

    /// Mean validation cost the baseline currently stands for, if any.
    fn val_cost(&self) -> Option<f64>;

    /// Named tensors that restore the baseline exactly.
    fn state(&self) -> Vec<(String, Tensor)>;

    fn restore(&mut self, state: Vec<(String, Tensor)>) -> Result<()>;
}

/// Mean greedy cost of `policy` over `set`, in packed batches.
pub fn mean_greedy_cost(policy: &Policy, set: &[Instance]) -> Result<f64> {
    let refs: Vec<&Instance> = set.iter().collect();
    let rollouts = policy.greedy_batch(&refs)?;
    Ok(rollouts.iter().map(|r| r.cost).sum::<f64>() / set.len() as f64)
}

/// A frozen copy of the policy whose greedy decode is the baseline; it is
/// replaced whenever a candidate's mean validation cost is strictly lower.
#[derive(Clone, Debug)]
pub struct GreedyRollout {
    frozen: Policy,
    val_cost: f64,
}

impl GreedyRollout {
    pub fn new(policy: &Policy, val_set: &[Instance]) -> Result<Self> {
        let val_cost = mean_greedy_cost(policy, val_set)?;
        Ok(GreedyRollout {
            frozen: policy.clone(),
            val_cost,
        })
    }

    pub fn frozen(&self) -> &Policy {
        &self.frozen
    }

    /// Evaluates `candidate` on `val_set` and adopts it on strict
    /// improvement.
    pub fn update(&mut self, candidate: &Policy, val_set: &[Instance]) -> Result<bool> {
        let cost = mean_greedy_cost(candidate, val_set)?;
        self.end_epoch(candidate, cost)
    }
}

const VAL_COST: &str = "baseline/val_cost";

impl Baseline for GreedyRollout {
    fn name(&self) -> &'static str {
        BaselineKind::GreedyRollout.name()
    }

    fn starts(&self, _graph: &Instance) -> Vec<Option<usize>> {
        vec![None]
    }

    fn reference_costs(&self, graphs: &[&Instance], costs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let greedy = self.frozen.greedy_batch(graphs)?;
        Ok(greedy
            .iter()
            .zip(costs)
            .map(|(g, c)| vec![g.cost; c.len()])
            .collect())
    }

    fn end_epoch(&mut self, candidate: &Policy, candidate_val_cost: f64) -> Result<bool> {
        if candidate_val_cost < self.val_cost {
            self.frozen = candidate.clone();
            self.val_cost = candidate_val_cost;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn val_cost(&self) -> Option<f64> {
        Some(self.val_cost)
    }

    fn state(&self) -> Vec<(String, Tensor)> {
        let p = self.frozen.params();
        let mut out: Vec<(String, Tensor)> = p
            .names()
            .iter()
            .zip(p.tensors())
            .map(|(n, t)| (format!("baseline/{}", n), t.clone()))
            .collect();
        out.push((VAL_COST.into(), Tensor::new(vec![1], vec![self.val_cost]).expect("one value")));
        out
    }

    fn restore(&mut self, state: Vec<(String, Tensor)>) -> Result<()> {
        let mut named = Vec::new();
        let mut val = None;
        for (name, t) in state {
            if name == VAL_COST {
                val = Some(t.data().first().copied().unwrap_or(f64::NAN));
            } else if let Some(rest) = name.strip_prefix("baseline/") {
                named.push((rest.to_string(), t));
            }
        }
        let val = val.ok_or_else(|| PolicyError::Corrupt("baseline validation cost missing".into()))?;
        let params = PolicyParams::from_named(self.frozen.config(), named)?;
        self.frozen = Policy::new(params)?;
        self.val_cost = val;
        Ok(())
    }
}

/// Rollouts forced to start at each of the first `starts` cities; each is
/// compared with the mean cost of its siblings.
#[derive(Clone, Debug)]
pub struct PomoShared {
    starts: usize,
    last_val: Option<f64>,
}

impl PomoShared {
    pub fn new(starts: usize) -> Result<Self> {
        if starts == 0 {
            return Err(PolicyError::invalid("pomo_starts must be positive"));
        }
        Ok(PomoShared { starts, last_val: None })
    }
}

/// The first `starts` non-depot nodes, in index order.
pub fn pomo_start_nodes(graph: &Instance, starts: usize) -> Vec<usize> {
    graph.cities().take(starts).collect()
}

/// `cost_i - mean(costs)` for every rollout.
pub fn shared_advantages(costs: &[f64]) -> Vec<f64> {
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    costs.iter().map(|&c| advantage(c, mean)).collect()
}

impl Baseline for PomoShared {
    fn name(&self) -> &'static str {
        BaselineKind::PomoShared.name()
    }

    fn starts(&self, graph: &Instance) -> Vec<Option<usize>> {
        pomo_start_nodes(graph, self.starts).into_iter().map(Some).collect()
    }

    fn reference_costs(&self, _graphs: &[&Instance], costs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(costs
            .iter()
            .map(|c| {
                let mean = c.iter().sum::<f64>() / c.len() as f64;
                vec![mean; c.len()]
            })
            .collect())
    }

    fn end_epoch(&mut self, _candidate: &Policy, candidate_val_cost: f64) -> Result<bool> {
        self.last_val = Some(candidate_val_cost);
        Ok(false)
    }

    fn val_cost(&self) -> Option<f64> {
        None
    }

    fn state(&self) -> Vec<(String, Tensor)> {
        Vec::new()
    }

    fn restore(&mut self, _state: Vec<(String, Tensor)>) -> Result<()> {
        Ok(())
    }
}

pub type BaselineFactory = fn(&TrainConfig, &Policy, &[Instance]) -> Result<Box<dyn Baseline>>;

/// Baselines selectable by name.
pub struct BaselineRegistry {
    entries: Vec<(&'static str, BaselineFactory)>,
}

impl BaselineRegistry {
    pub fn empty() -> Self {
        BaselineRegistry { entries: Vec::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(BaselineKind::GreedyRollout.name(), |_, policy, val| {
            Ok(Box::new(GreedyRollout::new(policy, val)?))
        });
        r.register(BaselineKind::PomoShared.name(), |cfg, _, _| {
            Ok(Box::new(PomoShared::new(cfg.pomo_starts)?))
        });
        r
    }

    /// Adds a factory; a later registration under the same name wins.
    pub fn register(&mut self, name: &'static str, factory: BaselineFactory) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, factory));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn create(
        &self,
        name: &str,
        cfg: &TrainConfig,
        policy: &Policy,
        val_set: &[Instance],
    ) -> Result<Box<dyn Baseline>> {
        let (_, f) = self
            .entries
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| PolicyError::invalid(format!("unknown baseline {:?}", name)))?;
        f(cfg, policy, val_set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelConfig;
    use mres_core::generate::generate_uniform;
    use mres_core::ProblemKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn advantage_sign() {
        assert_eq!(advantage(5.0, 5.0), 0.0);
        assert!((advantage(5.7, 5.8) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn shared_advantages_cancel() {
        assert_eq!(shared_advantages(&[3.0]), vec![0.0]);
        let a = shared_advantages(&[1.0, 2.0, 4.5, 0.5]);
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
    }

    fn val_set() -> Vec<Instance> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..6).map(|_| generate_uniform(8, &mut rng).unwrap()).collect()
    }

    #[test]
    fn greedy_rollout_replacement_rule() {
        let val = val_set();
        let cfg = ModelConfig::tiny(ProblemKind::Tsp);
        let a = Policy::init(&cfg, 1).unwrap();
        let ca = mean_greedy_cost(&a, &val).unwrap();
        let (b, cb) = (2..50)
            .map(|s| {
                let b = Policy::init(&cfg, s).unwrap();
                let c = mean_greedy_cost(&b, &val).unwrap();
                (b, c)
            })
            .find(|(_, c)| *c != ca)
            .unwrap();
        let b = &b;
        let (worse, better) = if ca < cb { (b, &a) } else { (&a, b) };

        let mut bl = GreedyRollout::new(better, &val).unwrap();
        assert!(!bl.update(worse, &val).unwrap());
        assert_eq!(bl.frozen(), better);
        // Equal means keep the incumbent.
        assert!(!bl.update(better, &val).unwrap());

        let mut bl = GreedyRollout::new(worse, &val).unwrap();
        assert!(bl.update(better, &val).unwrap());
        assert_eq!(bl.frozen(), better);
        assert_eq!(bl.val_cost(), Some(ca.min(cb)));
    }

    #[test]
    fn greedy_rollout_state_round_trip() {
        let val = val_set();
        let cfg = ModelConfig::tiny(ProblemKind::Tsp);
        let a = Policy::init(&cfg, 1).unwrap();
        let bl = GreedyRollout::new(&a, &val).unwrap();
        let mut other = GreedyRollout::new(&Policy::init(&cfg, 9).unwrap(), &val).unwrap();
        other.restore(bl.state()).unwrap();
        assert_eq!(other.frozen(), bl.frozen());
        assert_eq!(other.val_cost(), bl.val_cost());
    }

    #[test]
    fn registry_lookup() {
        let r = BaselineRegistry::with_builtins();
        assert_eq!(r.names(), vec!["greedy_rollout", "pomo_shared"]);
        let cfg = TrainConfig {
            model: ModelConfig::tiny(ProblemKind::Tsp),
            ..TrainConfig::default()
        };
        let p = Policy::init(&cfg.model, 0).unwrap();
        let b = r.create("pomo_shared", &cfg, &p, &val_set()).unwrap();
        assert_eq!(b.name(), "pomo_shared");
        assert!(r.create("nope", &cfg, &p, &val_set()).is_err());
    }
}
