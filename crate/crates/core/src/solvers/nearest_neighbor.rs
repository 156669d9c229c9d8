use super::require_tsp;
use crate::{Instance, Result, Tour};

/// Greedy tour from node 0, always moving to the closest unvisited node
/// (lowest index on ties).
pub fn nearest_neighbor(inst: &Instance) -> Result<Tour> {
    require_tsp(inst, "nearest_neighbor")?;
    let n = inst.n();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut cur = 0;
    visited[0] = true;
    order.push(0);
    for _ in 1..n {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in 0..n {
            if !visited[j] {
                let d = inst.dist(cur, j);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
        }
        visited[best] = true;
        order.push(best);
        cur = best;
    }
    Ok(Tour(order))
}
