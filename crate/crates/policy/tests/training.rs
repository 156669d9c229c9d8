use mres_core::generate::generate_uniform;
use mres_core::multires::build_hierarchy;
use mres_core::{Instance, Point, ProblemKind};
use mres_policy::rng::derive_rng;
use mres_policy::train::{
    multires_loss_terms, pomo_rollouts, Baseline, BaselineKind, GraphRole, LossWeights, StepKey, TrainConfig,
    Trainer,
};
use mres_policy::{DecodeMode, ModelConfig, Policy};
use mres_tensor::{adam_step, AdamConfig, AdamState, Tensor};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(kind: ProblemKind) -> TrainConfig {
    TrainConfig {
        problem: kind,
        n: 12,
        epochs: 1,
        steps_per_epoch: 2,
        batch_size: 6,
        val_size: 8,
        chunk_instances: 4,
        seed: 77,
        model: ModelConfig::tiny(kind),
        ..TrainConfig::default()
    }
}

fn max_abs(ts: &[Tensor]) -> f64 {
    ts.iter().flat_map(|t| t.data().iter()).fold(0.0, |m, x| m.max(x.abs()))
}

fn assert_close(a: &[Tensor], b: &[Tensor], tol: f64) {
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.data().iter().zip(y.data()) {
            assert!((p - q).abs() <= tol * (1.0 + q.abs()), "{} vs {}", p, q);
        }
    }
}

#[test]
fn self_baseline_under_greedy_decoding_gives_zero_advantages() {
    let t = Trainer::new(small_config(ProblemKind::Tsp)).unwrap();
    let out = t.step_terms(0, 0, DecodeMode::Greedy).unwrap();
    assert!(out.graphs.len() > t.config().batch_size);
    for g in &out.graphs {
        assert_eq!(g.advantage(), 0.0, "{:?}", g);
    }
    assert_eq!(max_abs(&out.grads), 0.0);
}

/// A baseline that always equals the rollout cost.
struct Echo;

impl Baseline for Echo {
    fn name(&self) -> &'static str {
        "echo"
    }
    fn starts(&self, _: &Instance) -> Vec<Option<usize>> {
        vec![None]
    }
    fn reference_costs(&self, _: &[&Instance], costs: &[Vec<f64>]) -> mres_policy::Result<Vec<Vec<f64>>> {
        Ok(costs.to_vec())
    }
    fn end_epoch(&mut self, _: &Policy, _: f64) -> mres_policy::Result<bool> {
        Ok(false)
    }
    fn val_cost(&self) -> Option<f64> {
        None
    }
    fn state(&self) -> Vec<(String, Tensor)> {
        Vec::new()
    }
    fn restore(&mut self, _: Vec<(String, Tensor)>) -> mres_policy::Result<()> {
        Ok(())
    }
}

#[test]
fn zero_advantages_leave_parameters_unchanged() {
    let cfg = small_config(ProblemKind::Tsp);
    let t = Trainer::new(cfg.clone()).unwrap();
    let mut policy = t.policy().clone();
    let before = policy.clone();
    let mut adam = AdamState::for_params(policy.params().tensors());
    for step in 0..3 {
        let batch = t.sample_batch(0, step).unwrap();
        let key = StepKey { seed: 1, epoch: 0, step: step as u64 };
        let out = multires_loss_terms(&policy, &Echo, &batch, &LossWeights::default(), key, DecodeMode::Sample, 4)
            .unwrap();
        assert_eq!(max_abs(&out.grads), 0.0);
        adam_step(policy.params_mut().tensors_mut(), &out.grads, &mut adam, &AdamConfig::default()).unwrap();
    }
    assert_eq!(policy, before);
}

#[test]
fn two_levels_and_five_clusters_set_the_term_weights() {
    let t = Trainer::new(small_config(ProblemKind::Tsp)).unwrap();
    let out = t.step_terms(0, 0, DecodeMode::Sample).unwrap();
    for i in 0..t.config().batch_size {
        let mine: Vec<_> = out.graphs.iter().filter(|g| g.instance == i).collect();
        let highs: Vec<_> = mine.iter().filter(|g| matches!(g.role, GraphRole::High(_))).collect();
        assert_eq!(highs.len(), 1);
        assert_eq!(highs[0].coef, 1.0);
        for g in mine.iter().filter(|g| matches!(g.role, GraphRole::Sub(_))) {
            assert_eq!(g.coef, 0.2);
        }
        let orig = mine.iter().find(|g| g.role == GraphRole::Original).unwrap();
        assert_eq!(orig.coef, 1.0);
        let terms = out.instances[i];
        assert!((terms.original - orig.advantage()).abs() < 1e-15);
        let sub: f64 = mine
            .iter()
            .filter(|g| matches!(g.role, GraphRole::Sub(_)))
            .map(|g| 0.2 * g.advantage())
            .sum();
        assert!((terms.sub - sub).abs() < 1e-12);
        assert!((terms.high - highs[0].advantage()).abs() < 1e-15);
    }
}

/// Recomputes the step gradient by teacher forcing the recorded rollouts.
fn teacher_gradient(t: &Trainer, epoch: usize, step: usize, literal: bool) -> (Vec<Tensor>, Vec<Tensor>) {
    let out = t.step_terms(epoch, step, DecodeMode::Sample).unwrap();
    let batch = t.sample_batch(epoch, step).unwrap();
    let b = batch.len() as f64;
    // Replay each graph's rollout with the same stream it was sampled from.
    let mut insts = Vec::new();
    let mut actions = Vec::new();
    let mut weights = Vec::new();
    for g in &out.graphs {
        let inst: &Instance = match g.role {
            GraphRole::Original => batch[g.instance].original(),
            GraphRole::Sub(k) => batch[g.instance].sub_instances()[k].instance.as_ref().unwrap(),
            GraphRole::High(l) => batch[g.instance].high_level_instances()[l],
        };
        let code = match g.role {
            GraphRole::Original => 0,
            GraphRole::Sub(k) => 1 + k as u64,
            GraphRole::High(l) => (1 << 20) + l as u64,
        };
        let mut rng = derive_rng(t.config().seed, &[0x5201, epoch as u64, step as u64, g.instance as u64, code, 0]);
        let r = t.policy().rollout(inst, DecodeMode::Sample, &mut rng).unwrap();
        assert_eq!(r.cost, g.costs[0]);
        insts.push(inst.clone());
        actions.push(r.actions);
        let w = if !literal {
            g.coef * g.advantage() / b
        } else if g.role == GraphRole::Original {
            out.instances[g.instance].total() / b
        } else {
            0.0
        };
        weights.push(w);
    }
    let refs: Vec<&Instance> = insts.iter().collect();
    let acts: Vec<&[usize]> = actions.iter().map(Vec::as_slice).collect();
    let (_, g) = t
        .policy()
        .weighted_log_prob_grad(&refs, &acts, &vec![None; refs.len()], &weights)
        .unwrap();
    (out.grads, g)
}

#[test]
fn gradient_pairs_each_graph_with_its_own_advantage() {
    let t = Trainer::new(small_config(ProblemKind::Tsp)).unwrap();
    let (got, want) = teacher_gradient(&t, 0, 1, false);
    assert!(max_abs(&want) > 0.0);
    assert_close(&got, &want, 1e-9);
}

#[test]
fn literal_pairing_uses_the_original_likelihood_only() {
    let cfg = TrainConfig {
        literal_pairing: true,
        ..small_config(ProblemKind::Tsp)
    };
    let t = Trainer::new(cfg).unwrap();
    let (got, want) = teacher_gradient(&t, 0, 0, true);
    assert_close(&got, &want, 1e-9);
}

#[test]
fn zero_level_weights_reduce_to_single_level_reinforce() {
    let cfg = small_config(ProblemKind::Tsp).without_multiresolution();
    let t = Trainer::new(cfg).unwrap();
    let out = t.step_terms(0, 0, DecodeMode::Sample).unwrap();
    assert!(out.graphs.iter().all(|g| g.role == GraphRole::Original));
    assert_eq!(out.graphs.len(), t.config().batch_size);
    for i in &out.instances {
        assert_eq!((i.sub, i.high), (0.0, 0.0));
    }
}

#[test]
fn epoch_log_decomposes_the_loss_and_runs_are_reproducible() {
    let run = || {
        let mut t = Trainer::new(small_config(ProblemKind::Tsp)).unwrap();
        let mut log = Vec::new();
        let stats = t.run(Some(&mut log), |_, _| Ok(())).unwrap();
        (t.policy().clone(), stats, log)
    };
    let (pa, sa, la) = run();
    let (pb, sb, lb) = run();
    assert_eq!(pa, pb);
    assert_eq!(sa, sb);
    assert_eq!(la, lb);
    let s = &sa[0];
    assert_eq!(s.loss_estimate, s.loss_original + s.loss_sub + s.loss_high);
    assert_eq!(s.step, 2);
    assert!(s.wall_seconds.is_none());
    let line = String::from_utf8(la).unwrap();
    assert_eq!(line.lines().count(), 1);
    assert!(line.contains("\"loss_estimate\""));
}

#[test]
fn thread_count_does_not_change_the_trajectory() {
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut t = Trainer::new(small_config(ProblemKind::Tsp)).unwrap();
            t.train_epoch().unwrap();
            t.policy().clone()
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn training_moves_the_parameters() {
    let mut t = Trainer::new(small_config(ProblemKind::Tsp)).unwrap();
    let before = t.policy().clone();
    t.train_epoch().unwrap();
    assert_ne!(t.policy(), &before);
    assert_eq!(t.adam().step, 2);
}

#[test]
fn cvrp_training_steps_with_both_baselines() {
    for baseline in [BaselineKind::GreedyRollout, BaselineKind::PomoShared] {
        let cfg = TrainConfig {
            baseline,
            pomo_starts: 3,
            ..small_config(ProblemKind::Cvrp)
        };
        let mut t = Trainer::new(cfg).unwrap();
        let s = t.train_epoch().unwrap();
        assert!(s.cost_original.is_finite() && s.loss_estimate.is_finite());
        assert_eq!(s.baseline_cost.is_some(), baseline == BaselineKind::GreedyRollout);
    }
}

#[test]
fn pomo_advantages_cancel_per_instance() {
    let p = Policy::init(&ModelConfig::tiny(ProblemKind::Tsp), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let inst = generate_uniform(10, &mut rng).unwrap();
        let out = pomo_rollouts(&p, &inst, 7, &mut rng).unwrap();
        assert!(out.advantages.iter().sum::<f64>().abs() < 1e-12);
        for (k, r) in out.rollouts.iter().enumerate() {
            assert_eq!(r.actions[0], k);
        }
        let one = pomo_rollouts(&p, &inst, 1, &mut rng).unwrap();
        assert_eq!(one.advantages, vec![0.0]);
    }
    let inst = generate_uniform(5, &mut rng).unwrap();
    assert!(pomo_rollouts(&p, &inst, 6, &mut rng).is_err());
}

#[test]
fn pomo_on_the_square_with_a_nearest_neighbour_policy() {
    let cfg = ModelConfig {
        clip: 100.0,
        ..ModelConfig::tiny(ProblemKind::Tsp)
    };
    let mut p = Policy::init(&cfg, 0).unwrap();
    // No learned attention and a sharp preference for the nearest node.
    let params = p.params_mut();
    for t in params.get_mut("dec.glimpse.out").unwrap().data_mut() {
        *t = 0.0;
    }
    params.get_mut("dec.distance").unwrap().data_mut()[0] = -1.0;
    let square = Instance::tsp(vec![
        Point::new(0.0, 0.0),
        Point::new(1.0, 0.0),
        Point::new(1.0, 1.0),
        Point::new(0.0, 1.0),
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = pomo_rollouts(&p, &square, 4, &mut rng).unwrap();
    for (&c, &a) in out.costs.iter().zip(&out.advantages) {
        assert!((c - 4.0).abs() < 1e-12);
        assert!(a.abs() < 1e-12);
    }
}

#[test]
fn sampled_gradient_matches_teacher_forced_gradient() {
    let p = Policy::init(&ModelConfig::tiny(ProblemKind::Tsp), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let insts: Vec<Instance> = (0..3).map(|_| generate_uniform(7, &mut rng).unwrap()).collect();
    let refs: Vec<&Instance> = insts.iter().collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..3).map(ChaCha8Rng::seed_from_u64).collect();
    let r: Vec<&mut dyn RngCore> = rngs.iter_mut().map(|r| r as &mut dyn RngCore).collect();
    let w = [0.5, -1.0, 2.0];
    let (rollouts, obj, g) = p
        .rollout_and_grad(&refs, DecodeMode::Sample, &[None; 3], r, |_| Ok(w.to_vec()))
        .unwrap();
    let acts: Vec<&[usize]> = rollouts.iter().map(|r| r.actions.as_slice()).collect();
    let (obj2, g2) = p.weighted_log_prob_grad(&refs, &acts, &[None; 3], &w).unwrap();
    assert_eq!(obj, obj2);
    assert_close(&g, &g2, 1e-12);
}

#[test]
fn hierarchy_for_cvrp_training_keeps_depot_out_of_clusters() {
    let cfg = small_config(ProblemKind::Cvrp);
    let t = Trainer::new(cfg).unwrap();
    for h in t.sample_batch(0, 0).unwrap() {
        for sg in h.sub_instances() {
            if let Some(inst) = &sg.instance {
                assert_eq!(inst.depot(), Some(0));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let inst = generate_uniform(12, &mut rng).unwrap();
    assert!(build_hierarchy(&inst, 5, 2, &mut rng).is_ok());
}
