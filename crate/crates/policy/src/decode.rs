use mres_core::{Instance, CAPACITY_TOLERANCE};

use crate::{PolicyError, Result};

/// Where a partial solution stands.
///
/// TSP: `first`/`current` are unset until the first move. CVRP: the vehicle
/// starts at the depot with full (unit) capacity; the depot is never marked
/// visited.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeState {
    pub visited: Vec<bool>,
    pub first: Option<usize>,
    pub current: Option<usize>,
    pub capacity: f64,
    pub t: usize,
    depot: Option<usize>,
    unvisited: usize,
}

impl DecodeState {
    pub fn new(inst: &Instance) -> Self {
        let n = inst.n();
        let depot = inst.depot();
        DecodeState {
            visited: vec![false; n],
            first: depot,
            current: depot,
            capacity: 1.0,
            t: 0,
            depot,
            unvisited: n - usize::from(depot.is_some()),
        }
    }

    /// True once every city is visited (the CVRP return to the depot is
    /// implicit).
    pub fn done(&self) -> bool {
        self.unvisited == 0
    }

    fn fits(&self, inst: &Instance, i: usize) -> bool {
        inst.demand(i) <= self.capacity + CAPACITY_TOLERANCE
    }

    /// `true` marks an action that is not allowed now.
    pub fn mask(&self, inst: &Instance) -> Vec<bool> {
        let n = inst.n();
        let Some(depot) = self.depot else {
            return self.visited.clone();
        };
        let mut mask = vec![true; n];
        let mut blocked_city = false;
        for i in 0..n {
            if i == depot || self.visited[i] {
                continue;
            }
            if self.fits(inst, i) {
                mask[i] = false;
            } else {
                blocked_city = true;
            }
        }
        // Go home only when some remaining city no longer fits, and never
        // straight back.
        mask[depot] = !(blocked_city && self.current != Some(depot));
        mask
    }

    pub fn apply(&mut self, inst: &Instance, action: usize) -> Result<()> {
        let mask = self.mask(inst);
        if action >= mask.len() || mask[action] {
            return Err(PolicyError::Infeasible(format!(
                "action {} not allowed at step {}",
                action, self.t
            )));
        }
        if Some(action) == self.depot {
            self.capacity = 1.0;
        } else {
            self.visited[action] = true;
            self.unvisited -= 1;
            if self.depot.is_some() {
                self.capacity = (self.capacity - inst.demand(action)).max(0.0);
            }
        }
        if self.first.is_none() {
            self.first = Some(action);
        }
        self.current = Some(action);
        self.t += 1;
        Ok(())
    }
}

/// Splits a CVRP action sequence into routes at depot visits.
pub fn routes_from_actions(actions: &[usize], depot: usize) -> Vec<Vec<usize>> {
    actions
        .split(|&a| a == depot)
        .filter(|r| !r.is_empty())
        .map(<[usize]>::to_vec)
        .collect()
}

/// The action sequence a CVRP solution corresponds to.
pub fn actions_from_routes(routes: &[Vec<usize>], depot: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for (k, r) in routes.iter().enumerate() {
        if k > 0 {
            out.push(depot);
        }
        out.extend(r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use mres_core::Point;

    fn cvrp() -> Instance {
        Instance::cvrp(
            vec![
                Point::new(0.0, 0.0),
                Point::new(1.0, 0.0),
                Point::new(0.0, 1.0),
                Point::new(1.0, 1.0),
            ],
            vec![0.0, 0.6, 0.5, 0.3],
            0,
        )
        .unwrap()
    }

    #[test]
    fn tsp_masks_visited() {
        let inst = Instance::tsp(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)]).unwrap();
        let mut s = DecodeState::new(&inst);
        assert_eq!(s.mask(&inst), vec![false; 3]);
        s.apply(&inst, 1).unwrap();
        assert_eq!(s.mask(&inst), vec![false, true, false]);
        assert!(s.apply(&inst, 1).is_err());
        s.apply(&inst, 0).unwrap();
        s.apply(&inst, 2).unwrap();
        assert!(s.done());
        assert_eq!(s.first, Some(1));
    }

    #[test]
    fn capacity_and_depot_rules() {
        let inst = cvrp();
        let mut s = DecodeState::new(&inst);
        // At the depot with a full vehicle: every city, not the depot.
        assert_eq!(s.mask(&inst), vec![true, false, false, false]);
        s.apply(&inst, 1).unwrap();
        // 0.4 left: city 2 (0.5) no longer fits, so the depot opens.
        assert_eq!(s.mask(&inst), vec![false, true, true, false]);
        s.apply(&inst, 3).unwrap();
        assert_eq!(s.mask(&inst), vec![false, true, true, true]);
        s.apply(&inst, 0).unwrap();
        assert_eq!(s.capacity, 1.0);
        assert_eq!(s.mask(&inst), vec![true, true, false, true]);
        s.apply(&inst, 2).unwrap();
        assert!(s.done());
    }

    #[test]
    fn route_round_trip() {
        let routes = vec![vec![1, 3], vec![2]];
        let acts = actions_from_routes(&routes, 0);
        assert_eq!(acts, vec![1, 3, 0, 2]);
        assert_eq!(routes_from_actions(&acts, 0), routes);
    }
}
