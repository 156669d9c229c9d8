use super::require_tsp;
use crate::{CoreError, Instance, Result, Tour};

const IMPROVEMENT_EPS: f64 = 1e-12;

/// First-improvement 2-opt: apply the first improving edge exchange found
/// in scan order and restart the scan, until none remains.
pub fn two_opt(inst: &Instance, tour: &Tour) -> Result<Tour> {
    require_tsp(inst, "two_opt")?;
    if !tour.is_permutation_of(inst.n()) {
        return Err(CoreError::invalid("two_opt needs a permutation of the nodes"));
    }
    let mut order = tour.order().to_vec();
    two_opt_sequence(&mut order, |a, b| inst.dist(a, b));
    Ok(Tour(order))
}

/// 2-opt on a closed sequence of arbitrary node ids, in place. Position 0
/// stays in place.
pub fn two_opt_sequence(seq: &mut [usize], dist: impl Fn(usize, usize) -> f64) {
    let n = seq.len();
    if n < 4 {
        return;
    }
    'restart: loop {
        for i in 0..n - 2 {
            let (a, b) = (seq[i], seq[i + 1]);
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (c, d) = (seq[j], seq[(j + 1) % n]);
                let delta = dist(a, c) + dist(b, d) - dist(a, b) - dist(c, d);
                if delta < -IMPROVEMENT_EPS {
                    seq[i + 1..=j].reverse();
                    continue 'restart;
                }
            }
        }
        break;
    }
}
