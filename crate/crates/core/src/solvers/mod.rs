//! Classical solvers behind a common [`Solver`] trait, selectable by name.

mod brute_force;
mod cvrp_sweep;
mod held_karp;
mod nearest_neighbor;
mod two_opt;

pub use brute_force::{brute_force, BRUTE_FORCE_MAX_N};
pub use cvrp_sweep::{cvrp_reference, random_cvrp_solution};
pub use held_karp::{held_karp, HELD_KARP_MAX_N};
pub use nearest_neighbor::nearest_neighbor;
pub use two_opt::{two_opt, two_opt_sequence};

use crate::{CoreError, Instance, ProblemKind, Result, Solution, Tour};

/// Anything that turns an instance into a feasible solution.
pub trait Solver: Send + Sync {
    fn name(&self) -> &str;

    fn supports(&self, kind: ProblemKind) -> bool;

    fn solve(&self, inst: &Instance) -> Result<Solution>;
}

fn require_tsp(inst: &Instance, solver: &str) -> Result<()> {
    if inst.is_cvrp() {
        return Err(CoreError::invalid(format!("{} solves TSP instances only", solver)));
    }
    Ok(())
}

pub struct NearestNeighbor;
pub struct NearestNeighborTwoOpt;
pub struct HeldKarp;
pub struct BruteForce;
pub struct Sweep;

impl Solver for NearestNeighbor {
    fn name(&self) -> &str {
        "nn"
    }
    fn supports(&self, kind: ProblemKind) -> bool {
        kind == ProblemKind::Tsp
    }
    fn solve(&self, inst: &Instance) -> Result<Solution> {
        Ok(Solution::Tour(nearest_neighbor(inst)?))
    }
}

impl Solver for NearestNeighborTwoOpt {
    fn name(&self) -> &str {
        "2opt"
    }
    fn supports(&self, kind: ProblemKind) -> bool {
        kind == ProblemKind::Tsp
    }
    fn solve(&self, inst: &Instance) -> Result<Solution> {
        let start = nearest_neighbor(inst)?;
        Ok(Solution::Tour(two_opt(inst, &start)?))
    }
}

impl Solver for HeldKarp {
    fn name(&self) -> &str {
        "heldkarp"
    }
    fn supports(&self, kind: ProblemKind) -> bool {
        kind == ProblemKind::Tsp
    }
    fn solve(&self, inst: &Instance) -> Result<Solution> {
        Ok(Solution::Tour(held_karp(inst)?.0))
    }
}

impl Solver for BruteForce {
    fn name(&self) -> &str {
        "bruteforce"
    }
    fn supports(&self, kind: ProblemKind) -> bool {
        kind == ProblemKind::Tsp
    }
    fn solve(&self, inst: &Instance) -> Result<Solution> {
        Ok(Solution::Tour(brute_force(inst)?.0))
    }
}

impl Solver for Sweep {
    fn name(&self) -> &str {
        "sweep"
    }
    fn supports(&self, kind: ProblemKind) -> bool {
        kind == ProblemKind::Cvrp
    }
    fn solve(&self, inst: &Instance) -> Result<Solution> {
        Ok(Solution::Routes(cvrp_reference(inst)?))
    }
}

/// Name-keyed collection of solvers; later registrations shadow earlier
/// ones with the same name.
pub struct SolverRegistry {
    solvers: Vec<Box<dyn Solver>>,
}

impl Default for SolverRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl SolverRegistry {
    pub fn empty() -> Self {
        SolverRegistry {
            solvers: Vec::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(NearestNeighbor));
        r.register(Box::new(NearestNeighborTwoOpt));
        r.register(Box::new(HeldKarp));
        r.register(Box::new(BruteForce));
        r.register(Box::new(Sweep));
        r
    }

    pub fn register(&mut self, solver: Box<dyn Solver>) {
        self.solvers.retain(|s| s.name() != solver.name());
        self.solvers.push(solver);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Solver> {
        self.solvers
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| CoreError::Unknown {
                what: "solver",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> Vec<&str> {
        self.solvers.iter().map(|s| s.name()).collect()
    }
}

/// Which objective a gap is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceKind {
    /// Held-Karp optimum.
    Exact,
    /// 2-opt on nearest neighbour (TSP) or sweep + 2-opt (CVRP).
    Heuristic,
}

impl ReferenceKind {
    pub fn label(self) -> &'static str {
        match self {
            ReferenceKind::Exact => "exact",
            ReferenceKind::Heuristic => "heuristic reference",
        }
    }
}

/// Reference objective for gap reporting: exact when `prefer_exact` and the
/// instance is small enough, otherwise the heuristic reference.
pub fn reference_length(inst: &Instance, prefer_exact: bool) -> Result<(f64, ReferenceKind)> {
    if inst.is_cvrp() {
        let sol = cvrp_reference(inst)?;
        return Ok((crate::cvrp_solution_length(inst, &sol)?, ReferenceKind::Heuristic));
    }
    if prefer_exact && inst.n() <= HELD_KARP_MAX_N {
        return Ok((held_karp(inst)?.1, ReferenceKind::Exact));
    }
    let tour = two_opt(inst, &nearest_neighbor(inst)?)?;
    Ok((crate::tour_length(inst, &tour)?, ReferenceKind::Heuristic))
}

pub(crate) fn canonical_length(inst: &Instance, tour: Tour) -> (Tour, f64) {
    let tour = tour.canonical(0);
    let len = crate::instance::closed_length(inst, tour.order());
    (tour, len)
}
