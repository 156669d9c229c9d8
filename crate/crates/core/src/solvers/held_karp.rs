use super::{canonical_length, require_tsp};
use crate::{CoreError, Instance, Result, Tour};

/// Largest instance accepted; the table has `2^(n-1) * (n-1)` entries.
pub const HELD_KARP_MAX_N: usize = 20;

/// Exact optimum by the Held-Karp subset recursion, node 0 as the anchor.
///
/// The reported length is recomputed along the canonical form of the
/// optimal tour, so it matches [`super::brute_force`] bit for bit whenever
/// both find the same tour.
pub fn held_karp(inst: &Instance) -> Result<(Tour, f64)> {
    require_tsp(inst, "held_karp")?;
    let n = inst.n();
    if n > HELD_KARP_MAX_N {
        return Err(CoreError::TooLarge {
            solver: "held_karp",
            n,
            limit: HELD_KARP_MAX_N,
        });
    }
    // Nodes 1..n are bit positions 0..m.
    let m = n - 1;
    let d: Vec<f64> = (0..n * n).map(|k| inst.dist(k / n, k % n)).collect();
    let full = 1usize << m;
    let mut cost = vec![f64::INFINITY; full * m];
    let mut parent = vec![u8::MAX; full * m];
    for j in 0..m {
        cost[(1 << j) * m + j] = d[j + 1];
    }
    for mask in 1..full {
        for j in 0..m {
            if mask & (1 << j) == 0 {
                continue;
            }
            let base = cost[mask * m + j];
            if base == f64::INFINITY {
                continue;
            }
            let row = &d[(j + 1) * n..(j + 2) * n];
            for k in 0..m {
                if mask & (1 << k) != 0 {
                    continue;
                }
                let next = mask | (1 << k);
                let c = base + row[k + 1];
                let slot = next * m + k;
                if c < cost[slot] {
                    cost[slot] = c;
                    parent[slot] = j as u8;
                }
            }
        }
    }
    let last_mask = full - 1;
    let mut best = f64::INFINITY;
    let mut end = 0;
    for j in 0..m {
        let c = cost[last_mask * m + j] + d[(j + 1) * n];
        if c < best {
            best = c;
            end = j;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut mask = last_mask;
    let mut j = end;
    loop {
        order.push(j + 1);
        let p = parent[mask * m + j];
        mask &= !(1 << j);
        if p == u8::MAX {
            break;
        }
        j = p as usize;
    }
    order.push(0);
    order.reverse();
    Ok(canonical_length(inst, Tour(order)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Point;

    #[test]
    fn unit_square() {
        let inst = Instance::tsp(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap();
        let (t, len) = held_karp(&inst).unwrap();
        assert_eq!(len, 4.0);
        assert!(t.is_permutation_of(4));
    }

    #[test]
    fn rejects_large_instances() {
        let coords = (0..21).map(|i| Point::new(i as f64, (i * i) as f64)).collect();
        let inst = Instance::tsp(coords).unwrap();
        assert!(matches!(held_karp(&inst), Err(CoreError::TooLarge { .. })));
    }
}
