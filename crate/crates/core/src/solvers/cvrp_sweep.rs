use rand::seq::SliceRandom;
use rand::Rng;

use super::two_opt_sequence;
use crate::{CoreError, CvrpSolution, Instance, Result, CAPACITY_TOLERANCE};

/// Sweep construction around the depot followed by 2-opt on every route.
///
/// Cities are visited in order of polar angle (ties by index) and a new
/// route starts whenever the next city would overflow the vehicle.
pub fn cvrp_reference(inst: &Instance) -> Result<CvrpSolution> {
    let depot = inst
        .depot()
        .ok_or_else(|| CoreError::invalid("cvrp_reference needs a CVRP instance"))?;
    let origin = inst.coords()[depot];
    let mut cities: Vec<(f64, usize)> = inst
        .cities()
        .map(|i| {
            let p = inst.coords()[i];
            ((p.y - origin.y).atan2(p.x - origin.x), i)
        })
        .collect();
    cities.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = cities.into_iter().map(|(_, i)| i).collect();
    let mut routes = split_by_capacity(inst, &order);
    for route in &mut routes {
        let mut seq = vec![depot];
        seq.extend(route.iter());
        two_opt_sequence(&mut seq, |a, b| inst.dist(a, b));
        *route = seq[1..].to_vec();
    }
    Ok(CvrpSolution::new(routes))
}

/// A random feasible solution: shuffled cities split greedily by capacity.
pub fn random_cvrp_solution<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> Result<CvrpSolution> {
    if !inst.is_cvrp() {
        return Err(CoreError::invalid("random_cvrp_solution needs a CVRP instance"));
    }
    let mut order: Vec<usize> = inst.cities().collect();
    order.shuffle(rng);
    Ok(CvrpSolution::new(split_by_capacity(inst, &order)))
}

fn split_by_capacity(inst: &Instance, order: &[usize]) -> Vec<Vec<usize>> {
    let mut routes = Vec::new();
    let mut current = Vec::new();
    let mut load = 0.0;
    for &c in order {
        let d = inst.demand(c);
        if !current.is_empty() && load + d > 1.0 + CAPACITY_TOLERANCE {
            routes.push(std::mem::take(&mut current));
            load = 0.0;
        }
        current.push(c);
        load += d;
    }
    if !current.is_empty() {
        routes.push(current);
    }
    routes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::generate_cvrp;
    use crate::{cvrp_solution_length, Point};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shared_point_single_route() {
        let inst = Instance::cvrp(
            vec![Point::new(0.0, 0.0), Point::new(0.3, 0.4), Point::new(0.3, 0.4)],
            vec![0.0, 0.5, 0.4],
            0,
        )
        .unwrap();
        let sol = cvrp_reference(&inst).unwrap();
        sol.check_feasible(&inst).unwrap();
        assert_eq!(sol.routes.len(), 1);
        assert!((cvrp_solution_length(&inst, &sol).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn always_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in [5, 20, 50, 100] {
            for _ in 0..10 {
                let inst = generate_cvrp(n, &mut rng).unwrap();
                cvrp_reference(&inst).unwrap().check_feasible(&inst).unwrap();
                random_cvrp_solution(&inst, &mut rng)
                    .unwrap()
                    .check_feasible(&inst)
                    .unwrap();
            }
        }
    }
}
