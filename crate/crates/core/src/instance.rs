use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Slack allowed when comparing summed normalized demands against capacity 1.
pub const CAPACITY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Tsp,
    Cvrp,
}

impl std::str::FromStr for ProblemKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsp" => Ok(ProblemKind::Tsp),
            "cvrp" => Ok(ProblemKind::Cvrp),
            _ => Err(CoreError::Unknown {
                what: "problem kind",
                name: s.to_string(),
            }),
        }
    }
}

/// A TSP or CVRP instance in the plane.
///
/// CVRP demands are normalized by the vehicle capacity, so every route may
/// carry a total demand of at most 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance")]
pub struct Instance {
    kind: ProblemKind,
    coords: Vec<Point>,
    #[serde(skip_serializing_if = "Option::is_none")]
    demands: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    depot: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

#[derive(Deserialize)]
struct RawInstance {
    kind: ProblemKind,
    coords: Vec<Point>,
    demands: Option<Vec<f64>>,
    depot: Option<usize>,
    name: Option<String>,
}

impl TryFrom<RawInstance> for Instance {
    type Error = CoreError;

    fn try_from(raw: RawInstance) -> Result<Self> {
        let inst = match raw.kind {
            ProblemKind::Tsp => {
                if raw.demands.is_some() || raw.depot.is_some() {
                    return Err(CoreError::invalid("TSP instance with demands or depot"));
                }
                Instance::tsp(raw.coords)?
            }
            ProblemKind::Cvrp => {
                let demands = raw
                    .demands
                    .ok_or_else(|| CoreError::invalid("CVRP instance without demands"))?;
                Instance::cvrp(raw.coords, demands, raw.depot.unwrap_or(0))?
            }
        };
        Ok(inst.with_name(raw.name))
    }
}

impl Instance {
    pub fn tsp(coords: Vec<Point>) -> Result<Self> {
        check_coords(&coords)?;
        Ok(Instance {
            kind: ProblemKind::Tsp,
            coords,
            demands: None,
            depot: None,
            name: None,
        })
    }

    pub fn cvrp(coords: Vec<Point>, demands: Vec<f64>, depot: usize) -> Result<Self> {
        check_coords(&coords)?;
        if demands.len() != coords.len() {
            return Err(CoreError::invalid(format!(
                "{} demands for {} nodes",
                demands.len(),
                coords.len()
            )));
        }
        if depot >= coords.len() {
            return Err(CoreError::invalid(format!("depot {} out of range", depot)));
        }
        for (i, &d) in demands.iter().enumerate() {
            if i == depot {
                if d != 0.0 {
                    return Err(CoreError::invalid("depot demand must be 0"));
                }
            } else if !(d > 0.0 && d <= 1.0) {
                return Err(CoreError::invalid(format!(
                    "demand {} of node {} outside (0, 1]",
                    d, i
                )));
            }
        }
        Ok(Instance {
            kind: ProblemKind::Cvrp,
            coords,
            demands: Some(demands),
            depot: Some(depot),
            name: None,
        })
    }

    pub fn with_name(mut self, name: Option<String>) -> Self {
        self.name = name;
        self
    }

    /// Same problem data at new positions.
    pub fn with_coords(&self, coords: Vec<Point>) -> Result<Self> {
        if coords.len() != self.coords.len() {
            return Err(CoreError::invalid("coordinate count changed"));
        }
        check_coords(&coords)?;
        Ok(Instance {
            coords,
            ..self.clone()
        })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn is_cvrp(&self) -> bool {
        self.kind == ProblemKind::Cvrp
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn demands(&self) -> Option<&[f64]> {
        self.demands.as_deref()
    }

    pub fn demand(&self, i: usize) -> f64 {
        self.demands.as_ref().map_or(0.0, |d| d[i])
    }

    pub fn depot(&self) -> Option<usize> {
        self.depot
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.coords[i].dist(self.coords[j])
    }

    /// Node indices that must be visited: all nodes for TSP, all but the
    /// depot for CVRP.
    pub fn cities(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&i| Some(i) != self.depot)
    }

    pub fn centroid(&self) -> Point {
        let n = self.n() as f64;
        let (sx, sy) = self
            .coords
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point::new(sx / n, sy / n)
    }
}

fn check_coords(coords: &[Point]) -> Result<()> {
    if coords.len() < 3 {
        return Err(CoreError::invalid(format!(
            "an instance needs at least 3 nodes, got {}",
            coords.len()
        )));
    }
    if let Some(i) = coords
        .iter()
        .position(|p| !p.x.is_finite() || !p.y.is_finite())
    {
        return Err(CoreError::invalid(format!("node {} has a non-finite coordinate", i)));
    }
    Ok(())
}

/// A closed tour: a permutation of the node indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tour(pub Vec<usize>);

impl Tour {
    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_permutation_of(&self, n: usize) -> bool {
        if self.0.len() != n {
            return false;
        }
        let mut seen = vec![false; n];
        self.0
            .iter()
            .all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
    }

    /// Rotated to start at `start` and oriented towards the smaller
    /// neighbour, so tours equal up to rotation/reflection compare equal.
    pub fn canonical(&self, start: usize) -> Tour {
        let n = self.0.len();
        let Some(pos) = self.0.iter().position(|&v| v == start) else {
            return self.clone();
        };
        let fwd: Vec<usize> = (0..n).map(|k| self.0[(pos + k) % n]).collect();
        if n > 2 && fwd[n - 1] < fwd[1] {
            let mut rev = vec![fwd[0]];
            rev.extend(fwd[1..].iter().rev());
            Tour(rev)
        } else {
            Tour(fwd)
        }
    }
}

/// CVRP routes; the depot is implicit at both ends of every route.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CvrpSolution {
    pub routes: Vec<Vec<usize>>,
}

impl CvrpSolution {
    pub fn new(routes: Vec<Vec<usize>>) -> Self {
        CvrpSolution { routes }
    }

    /// Coverage, capacity, and non-empty route checks.
    pub fn check_feasible(&self, inst: &Instance) -> Result<()> {
        let depot = inst
            .depot()
            .ok_or_else(|| CoreError::invalid("CVRP solution for a TSP instance"))?;
        let mut seen = vec![false; inst.n()];
        for (r, route) in self.routes.iter().enumerate() {
            if route.is_empty() {
                return Err(CoreError::InfeasibleSolution(format!("route {} is empty", r)));
            }
            let mut load = 0.0;
            for &v in route {
                if v >= inst.n() || v == depot {
                    return Err(CoreError::InfeasibleSolution(format!(
                        "route {} visits invalid node {}",
                        r, v
                    )));
                }
                if std::mem::replace(&mut seen[v], true) {
                    return Err(CoreError::InfeasibleSolution(format!(
                        "node {} visited twice",
                        v
                    )));
                }
                load += inst.demand(v);
            }
            if load > 1.0 + CAPACITY_TOLERANCE {
                return Err(CoreError::InfeasibleSolution(format!(
                    "route {} carries {:.6} > capacity",
                    r, load
                )));
            }
        }
        if let Some(v) = inst.cities().find(|&v| !seen[v]) {
            return Err(CoreError::InfeasibleSolution(format!("node {} not visited", v)));
        }
        Ok(())
    }
}

/// Either kind of solution, as stored in solution files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solution {
    Tour(Tour),
    Routes(CvrpSolution),
}

impl Solution {
    pub fn length(&self, inst: &Instance) -> Result<f64> {
        match self {
            Solution::Tour(t) => tour_length(inst, t),
            Solution::Routes(s) => cvrp_solution_length(inst, s),
        }
    }

    /// Node sequence as it would be drawn: the tour, or every route with the
    /// depot in between.
    pub fn node_sequence(&self, inst: &Instance) -> Vec<usize> {
        match self {
            Solution::Tour(t) => t.0.clone(),
            Solution::Routes(s) => {
                let depot = inst.depot().unwrap_or(0);
                let mut seq = vec![depot];
                for r in &s.routes {
                    seq.extend(r);
                    seq.push(depot);
                }
                seq
            }
        }
    }
}

/// Length of the closed tour through `tour`.
pub fn tour_length(inst: &Instance, tour: &Tour) -> Result<f64> {
    if !tour.is_permutation_of(inst.n()) {
        return Err(CoreError::invalid(format!(
            "tour of {} entries is not a permutation of {} nodes",
            tour.len(),
            inst.n()
        )));
    }
    Ok(closed_length(inst, tour.order()))
}

/// Closed-loop length of an arbitrary index sequence, unchecked.
pub fn closed_length(inst: &Instance, seq: &[usize]) -> f64 {
    let Some((&first, _)) = seq.split_first() else {
        return 0.0;
    };
    let mut total = 0.0;
    for w in seq.windows(2) {
        total += inst.dist(w[0], w[1]);
    }
    total + inst.dist(seq[seq.len() - 1], first)
}

/// Sum over routes of depot -> route -> depot lengths.
pub fn cvrp_solution_length(inst: &Instance, sol: &CvrpSolution) -> Result<f64> {
    sol.check_feasible(inst)?;
    let depot = inst.depot().unwrap_or(0);
    Ok(sol
        .routes
        .iter()
        .map(|r| route_length(inst, depot, r))
        .sum())
}

pub(crate) fn route_length(inst: &Instance, depot: usize, route: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut prev = depot;
    for &v in route {
        total += inst.dist(prev, v);
        prev = v;
    }
    total + inst.dist(prev, depot)
}
