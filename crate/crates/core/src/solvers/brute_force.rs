use super::{canonical_length, require_tsp};
use crate::{CoreError, Instance, Result, Tour};

pub const BRUTE_FORCE_MAX_N: usize = 9;

/// Exhaustive search over the (n-1)!/2 tours through node 0.
pub fn brute_force(inst: &Instance) -> Result<(Tour, f64)> {
    require_tsp(inst, "brute_force")?;
    let n = inst.n();
    if n > BRUTE_FORCE_MAX_N {
        return Err(CoreError::TooLarge {
            solver: "brute_force",
            n,
            limit: BRUTE_FORCE_MAX_N,
        });
    }
    let mut rest: Vec<usize> = (1..n).collect();
    let mut best = f64::INFINITY;
    let mut best_order = Vec::new();
    permute(&mut rest, 0, &mut |perm| {
        // Each cycle appears twice, once per direction.
        if perm[0] > perm[perm.len() - 1] {
            return;
        }
        let mut len = inst.dist(0, perm[0]);
        for w in perm.windows(2) {
            len += inst.dist(w[0], w[1]);
        }
        len += inst.dist(perm[perm.len() - 1], 0);
        if len < best {
            best = len;
            best_order = perm.to_vec();
        }
    });
    let mut order = vec![0];
    order.extend(best_order);
    Ok(canonical_length(inst, Tour(order)))
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}
