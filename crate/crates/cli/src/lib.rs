//! The `mres` command line: dataset generation, clustering, training,
//! evaluation, the symmetry suite, classical solvers and SVG plots.

pub mod error;
pub mod svg;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mres_core::dataset::{read_instances, read_jsonl, read_solutions, write_instances, write_solutions, SolutionRecord};
use mres_core::generate::{sample_instance, Distribution};
use mres_core::solvers::SolverRegistry;
use mres_core::{build_hierarchy, Instance, ProblemKind};
use mres_policy::eval::{cross_distribution_eval, evaluate, symmetry_suite, EvalMode, Reference};
use mres_policy::rng::derive_rng;
use mres_policy::train::{BaselineKind, EpochStats, TrainConfig};
use mres_policy::{Checkpoint, Policy, PolicySolver};
use rayon::prelude::*;

pub use error::{CliError, Result};

const TAG_GENERATE: u64 = 0x6e4e;
const TAG_CLUSTER: u64 = 0xc1a5;

#[derive(Debug, Parser)]
#[command(name = "mres", version, about = "Multiresolution routing policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write random instances as JSON lines.
    Generate(GenerateArgs),
    /// Build K-means hierarchies for every instance of a dataset.
    Cluster(ClusterArgs),
    /// Train a policy, checkpointing after every epoch.
    Train(TrainArgs),
    /// Evaluate a checkpoint against reference solutions.
    Eval(EvalArgs),
    /// Check greedy decisions under rotation, translation and scaling.
    Symmetry(SymmetryArgs),
    /// Evaluate across sizes and point distributions.
    Cross(CrossArgs),
    /// Solve a dataset with a classical method or a checkpoint.
    Solve(SolveArgs),
    /// Draw instances (and solutions, and clusters) as SVG files.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Tsp,
    Cvrp,
}

impl From<KindArg> for ProblemKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Tsp => ProblemKind::Tsp,
            KindArg::Cvrp => ProblemKind::Cvrp,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DistArg {
    Uniform,
    Clustered,
    Mixed,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value = "tsp")]
    pub kind: KindArg,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    pub dist: DistArg,
    /// Cluster centres for clustered and mixed sets.
    #[arg(long, default_value_t = 3)]
    pub nc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BaselineArg {
    GreedyRollout,
    PomoShared,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training config; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Directory for checkpoints, the resolved config and the log.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub problem: Option<KindArg>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    /// Train on the original graphs only.
    #[arg(long)]
    pub no_multires: bool,
    /// Add wall-clock seconds to the log (logs then differ between runs).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Greedy,
    Sample,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ReferenceArg {
    Heldkarp,
    Heuristic,
}

impl From<ReferenceArg> for Reference {
    fn from(r: ReferenceArg) -> Self {
        match r {
            ReferenceArg::Heldkarp => Reference::Exact,
            ReferenceArg::Heuristic => Reference::Heuristic,
        }
    }
}

fn eval_mode(mode: ModeArg, samples: usize) -> EvalMode {
    match mode {
        ModeArg::Greedy => EvalMode::Greedy,
        ModeArg::Sample => EvalMode::Sample(samples),
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "greedy")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1280)]
    pub samples: usize,
    #[arg(long, value_enum, default_value = "heldkarp")]
    pub reference: ReferenceArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Record decode times.
    #[arg(long)]
    pub timing: bool,
    /// Per-instance CSV; the aggregate goes to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SymmetryArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "20,50")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "uniform,clustered,mixed")]
    pub dists: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "3,7")]
    pub nc: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, value_enum, default_value = "greedy")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1280)]
    pub samples: usize,
    #[arg(long, value_enum, default_value = "heldkarp")]
    pub reference: ReferenceArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// nn, 2opt, heldkarp, bruteforce, sweep or policy.
    #[arg(long)]
    pub method: String,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Checkpoint for `--method policy`.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub solutions: Option<PathBuf>,
    /// Output of `cluster`; colours cities by their finest cluster.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Cluster(a) => cluster(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Symmetry(a) => symmetry(&a),
        Command::Cross(a) => cross(&a),
        Command::Solve(a) => solve(&a),
        Command::Plot(a) => plot(&a),
    }
}

fn load_instances(path: &Path) -> Result<Vec<Instance>> {
    let set = read_instances(path).map_err(|e| CliError::at(path)(e.into()))?;
    if set.is_empty() {
        return Err(CliError::at(path)(CliError::Usage("dataset is empty".into())));
    }
    Ok(set)
}

fn load_policy(path: &Path) -> Result<Policy> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::at(path)(e.into()))?;
    Ok(ck.policy()?)
}

fn check_kind(policy: &Policy, set: &[Instance]) -> Result<()> {
    let want = policy.config().problem;
    if set.iter().any(|i| i.kind() != want) {
        return Err(CliError::Policy(mres_policy::PolicyError::Mismatch(format!(
            "checkpoint solves {:?} but the dataset holds other instances",
            want
        ))));
    }
    Ok(())
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let dist = match a.dist {
        DistArg::Uniform => Distribution::Uniform,
        DistArg::Clustered => Distribution::Clustered { n_c: a.nc },
        DistArg::Mixed => Distribution::Mixed { n_c: a.nc },
    };
    let mut rng = derive_rng(a.seed, &[TAG_GENERATE]);
    let set = (0..a.count)
        .map(|_| sample_instance(a.kind.into(), a.n, dist, &mut rng))
        .collect::<mres_core::Result<Vec<_>>>()?;
    write_instances(&a.out, &set)?;
    log::info!("wrote {} instances to {}", set.len(), a.out.display());
    Ok(())
}

fn cluster(a: &ClusterArgs) -> Result<()> {
    let set = load_instances(&a.input)?;
    let hs = set
        .iter()
        .enumerate()
        .map(|(i, inst)| build_hierarchy(inst, a.k, a.levels, &mut derive_rng(a.seed, &[TAG_CLUSTER, i as u64])))
        .collect::<mres_core::Result<Vec<_>>>()?;
    mres_core::dataset::write_jsonl(&a.out, &hs)?;
    Ok(())
}

/// The config of a fresh run: file, then flags.
pub fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::at(p)(e.into()))?;
            serde_json::from_str(&text).map_err(|e| CliError::at(p)(e.into()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(k) = a.problem {
        cfg.problem = k.into();
        cfg.model.problem = cfg.problem;
    }
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(n, epochs, steps_per_epoch, batch_size, lr, seed);
    if let Some(b) = a.baseline {
        cfg.baseline = match b {
            BaselineArg::GreedyRollout => BaselineKind::GreedyRollout,
            BaselineArg::PomoShared => BaselineKind::PomoShared,
        };
    }
    if a.no_multires {
        cfg = cfg.without_multiresolution();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub const LOG_FILE: &str = "train_log.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

pub fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{:03}.ckpt", epoch))
}

/// Log lines of epochs before `epoch`, so a resumed run's log matches an
/// uninterrupted one.
fn log_prefix(path: &Path, epoch: usize) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut keep = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        let stats: EpochStats = serde_json::from_str(&line).map_err(|e| CliError::at(path)(e.into()))?;
        if stats.epoch < epoch {
            keep.push(line);
        }
    }
    Ok(keep)
}

fn train(a: &TrainArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut ck = Checkpoint::load(path).map_err(|e| CliError::at(path)(e.into()))?;
            let saved = ck
                .train
                .clone()
                .ok_or_else(|| CliError::Usage("checkpoint holds no training state".into()))?;
            if a.config.is_some() {
                let mut wanted = resolve_config(a)?;
                wanted.epochs = saved.epochs;
                if wanted != saved {
                    return Err(mres_policy::PolicyError::Mismatch(
                        "config differs from the one the checkpoint was trained with".into(),
                    )
                    .into());
                }
            }
            if let Some(e) = a.epochs {
                ck.train.as_mut().expect("checked above").epochs = e;
            }
            ck.into_trainer()?
        }
        None => mres_policy::train::Trainer::new(resolve_config(a)?)?,
    }
    .record_time(a.timing);

    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(trainer.config())? + "\n")?;
    let log_path = a.out.join(LOG_FILE);
    let prefix = log_prefix(&log_path, trainer.epoch())?;
    let mut log = BufWriter::new(fs::File::create(&log_path)?);
    for line in prefix {
        writeln!(log, "{}", line)?;
    }
    let start = Checkpoint::from_trainer(&trainer);
    start.save(&epoch_checkpoint(&a.out, trainer.epoch()))?;
    start.save(&a.out.join(LAST_CHECKPOINT))?;

    let out = a.out.clone();
    trainer.run(Some(&mut log), |t, _| {
        let ck = Checkpoint::from_trainer(t);
        ck.save(&epoch_checkpoint(&out, t.epoch()))?;
        ck.save(&out.join(LAST_CHECKPOINT))
    })?;
    log.flush()?;
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let policy = load_policy(&a.ckpt)?;
    let set = load_instances(&a.input)?;
    check_kind(&policy, &set)?;
    let rep = evaluate(&policy, &set, eval_mode(a.mode, a.samples), a.reference.into(), a.seed, a.timing)?;
    rep.save(&a.out)?;
    println!("{}", serde_json::to_string_pretty(&rep.summary)?);
    Ok(())
}

fn symmetry(a: &SymmetryArgs) -> Result<()> {
    let policy = load_policy(&a.ckpt)?;
    let set = load_instances(&a.input)?;
    check_kind(&policy, &set)?;
    let rep = symmetry_suite(&policy, &set, &mut derive_rng(a.seed, &[]))?;
    rep.write_csv(fs::File::create(&a.out)?)?;
    let summary = serde_json::json!({
        "checks": rep.rows.len(),
        "consistency": rep.consistency(),
        "rotation": rep.consistency_of("rotation"),
        "translation": rep.consistency_of("translation"),
        "scaling": rep.consistency_of("scaling"),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cross(a: &CrossArgs) -> Result<()> {
    let policy = load_policy(&a.ckpt)?;
    let dists: Vec<&str> = a.dists.iter().map(String::as_str).collect();
    let rows = cross_distribution_eval(
        &policy,
        &a.sizes,
        &dists,
        &a.nc,
        a.count,
        eval_mode(a.mode, a.samples),
        a.reference.into(),
        a.seed,
    )?;
    let mut w = csv::Writer::from_path(&a.out).map_err(mres_policy::PolicyError::from)?;
    for r in &rows {
        w.serialize(r).map_err(mres_policy::PolicyError::from)?;
        println!(
            "n={:<4} {:<10} nc={:<3} obj {:.4}  gap {:.2}%",
            r.n,
            r.distribution,
            r.n_c,
            r.mean_objective,
            100.0 * r.mean_gap
        );
    }
    w.flush()?;
    Ok(())
}

fn solve(a: &SolveArgs) -> Result<()> {
    let set = load_instances(&a.input)?;
    let mut registry = SolverRegistry::with_builtins();
    if a.method == "policy" {
        let path = a
            .ckpt
            .as_ref()
            .ok_or_else(|| CliError::Usage("--method policy needs --ckpt".into()))?;
        let policy = load_policy(path)?;
        check_kind(&policy, &set)?;
        registry.register(Box::new(PolicySolver::new(policy)));
    }
    let solver = registry
        .get(&a.method)
        .map_err(|_| CliError::Usage(format!("unknown method {:?}; known: {}", a.method, registry.names().join(", "))))?;
    let records = set
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let solution = solver.solve(inst)?;
            Ok(SolutionRecord {
                instance: i,
                method: a.method.clone(),
                length: solution.length(inst)?,
                solution,
            })
        })
        .collect::<mres_core::Result<Vec<_>>>()?;
    write_solutions(&a.out, &records)?;
    Ok(())
}

/// Finest-level cluster of every original node, per hierarchy.
fn read_clusters(path: &Path) -> Result<Vec<Vec<usize>>> {
    let values: Vec<serde_json::Value> = read_jsonl(path).map_err(|e| CliError::at(path)(e.into()))?;
    values
        .iter()
        .map(|v| {
            let finest = v["levels"].as_array().and_then(|l| l.last());
            let assignment = finest.map(|f| f["assignment"].clone()).unwrap_or_default();
            serde_json::from_value(assignment).map_err(|e| CliError::at(path)(e.into()))
        })
        .collect()
}

fn plot(a: &PlotArgs) -> Result<()> {
    let set = load_instances(&a.input)?;
    let solutions = match &a.solutions {
        Some(p) => read_solutions(p).map_err(|e| CliError::at(p)(e.into()))?,
        None => Vec::new(),
    };
    let clusters = match &a.hierarchy {
        Some(p) => read_clusters(p)?,
        None => Vec::new(),
    };
    fs::create_dir_all(&a.out)?;
    for (i, inst) in set.iter().enumerate() {
        let sol = solutions.iter().find(|r| r.instance == i).map(|r| &r.solution);
        let cl = clusters.get(i).map(Vec::as_slice).filter(|c| c.len() == inst.n());
        fs::write(a.out.join(format!("instance_{:04}.svg", i)), svg::render(inst, sol, cl))?;
    }
    Ok(())
}
