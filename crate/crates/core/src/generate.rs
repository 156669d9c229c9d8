//! Random instance generators.
//!
//! Every generator draws only from the RNG it is handed, so the same seed
//! always reproduces the same instance.

use rand::Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::{CoreError, Instance, Point, ProblemKind, Result};

/// Per-axis standard deviation of cities around a cluster centre.
pub const CLUSTER_SIGMA: f64 = 0.07;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "dist")]
pub enum Distribution {
    Uniform,
    Clustered { n_c: usize },
    Mixed { n_c: usize },
}

impl Distribution {
    pub fn parse(name: &str, n_c: usize) -> Result<Self> {
        match name {
            "uniform" => Ok(Distribution::Uniform),
            "clustered" | "cluster" => Ok(Distribution::Clustered { n_c }),
            "mixed" => Ok(Distribution::Mixed { n_c }),
            _ => Err(CoreError::Unknown {
                what: "distribution",
                name: name.to_string(),
            }),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Distribution::Uniform => "uniform".into(),
            Distribution::Clustered { n_c } => format!("clustered(nc={})", n_c),
            Distribution::Mixed { n_c } => format!("mixed(nc={})", n_c),
        }
    }

    /// Coordinates of `n` points.
    pub fn sample_points<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Point>> {
        match *self {
            Distribution::Uniform => Ok(uniform_points(n, rng)),
            Distribution::Clustered { n_c } => clustered_points(n, n_c, CLUSTER_SIGMA, rng),
            Distribution::Mixed { n_c } => mixed_points(n, n_c, CLUSTER_SIGMA, rng),
        }
    }
}

/// `n` (TSP) or `n` cities plus a depot (CVRP) drawn from `dist`.
pub fn sample_instance<R: Rng + ?Sized>(
    kind: ProblemKind,
    n: usize,
    dist: Distribution,
    rng: &mut R,
) -> Result<Instance> {
    match kind {
        ProblemKind::Tsp => Instance::tsp(dist.sample_points(n, rng)?),
        ProblemKind::Cvrp => {
            let mut coords = vec![uniform_point(rng)];
            coords.extend(dist.sample_points(n, rng)?);
            cvrp_with_demands(coords, n, rng)
        }
    }
}

pub fn generate_uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Instance> {
    Instance::tsp(uniform_points(n, rng))
}

pub fn generate_clustered<R: Rng + ?Sized>(n: usize, n_c: usize, rng: &mut R) -> Result<Instance> {
    Instance::tsp(clustered_points(n, n_c, CLUSTER_SIGMA, rng)?)
}

pub fn generate_mixed<R: Rng + ?Sized>(n: usize, n_c: usize, rng: &mut R) -> Result<Instance> {
    Instance::tsp(mixed_points(n, n_c, CLUSTER_SIGMA, rng)?)
}

/// Mixed distribution with an explicit cluster noise.
pub fn generate_mixed_with_sigma<R: Rng + ?Sized>(
    n: usize,
    n_c: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Instance> {
    Instance::tsp(mixed_points(n, n_c, sigma, rng)?)
}

/// A depot and `n` cities, uniform in the unit square, with integer demands
/// 1..=9 normalized by the size-dependent capacity. The depot is node 0.
pub fn generate_cvrp<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Instance> {
    sample_instance(ProblemKind::Cvrp, n, Distribution::Uniform, rng)
}

/// Vehicle capacity for `n` cities: 30/40/50 at 20/50/100, linear in
/// between and beyond, never below 30.
pub fn cvrp_capacity(n: usize) -> u32 {
    let n = n as f64;
    let c = if n <= 50.0 {
        30.0 + (n - 20.0) * 10.0 / 30.0
    } else {
        40.0 + (n - 50.0) * 10.0 / 50.0
    };
    c.round().max(30.0) as u32
}

fn cvrp_with_demands<R: Rng + ?Sized>(coords: Vec<Point>, n: usize, rng: &mut R) -> Result<Instance> {
    let cap = f64::from(cvrp_capacity(n));
    let mut demands = vec![0.0];
    demands.extend((0..n).map(|_| f64::from(rng.gen_range(1u32..=9)) / cap));
    Instance::cvrp(coords, demands, 0)
}

fn uniform_point<R: Rng + ?Sized>(rng: &mut R) -> Point {
    Point::new(rng.gen::<f64>(), rng.gen::<f64>())
}

fn uniform_points<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Point> {
    (0..n).map(|_| uniform_point(rng)).collect()
}

fn around_centroids<R: Rng + ?Sized>(
    count: usize,
    centroids: &[Point],
    sigma: f64,
    rng: &mut R,
) -> Vec<Point> {
    (0..count)
        .map(|_| {
            let c = centroids[rng.gen_range(0..centroids.len())];
            if sigma == 0.0 {
                return c;
            }
            let noise = Normal::new(0.0, sigma).expect("sigma is finite and positive");
            Point::new(
                (c.x + noise.sample(rng)).clamp(0.0, 1.0),
                (c.y + noise.sample(rng)).clamp(0.0, 1.0),
            )
        })
        .collect()
}

fn clustered_points<R: Rng + ?Sized>(
    n: usize,
    n_c: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<Point>> {
    check_clusters(n, n_c)?;
    let centroids = uniform_points(n_c, rng);
    Ok(around_centroids(n, &centroids, sigma, rng))
}

fn mixed_points<R: Rng + ?Sized>(
    n: usize,
    n_c: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<Point>> {
    check_clusters(n, n_c)?;
    let centroids = uniform_points(n_c, rng);
    let half = n / 2;
    let mut points = uniform_points(half, rng);
    points.extend(around_centroids(n - half, &centroids, sigma, rng));
    Ok(points)
}

fn check_clusters(n: usize, n_c: usize) -> Result<()> {
    if n_c == 0 || n_c > n {
        return Err(CoreError::invalid(format!(
            "need 1 <= n_c <= n, got n_c = {} for n = {}",
            n_c, n
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn in_unit_square(inst: &Instance) -> bool {
        inst.coords()
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y))
    }

    #[test]
    fn uniform_is_deterministic_and_in_range() {
        let a = generate_uniform(20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = generate_uniform(20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 20);
        assert!(in_unit_square(&a));
    }

    #[test]
    fn clustered_sizes_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = generate_clustered(50, 3, &mut rng).unwrap();
        assert_eq!(inst.n(), 50);
        assert!(in_unit_square(&inst));
        let mixed = generate_mixed(50, 3, &mut rng).unwrap();
        assert_eq!(mixed.n(), 50);
        assert!(in_unit_square(&mixed));
    }

    #[test]
    fn too_many_clusters_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(generate_clustered(5, 6, &mut rng).is_err());
        assert!(generate_mixed(5, 0, &mut rng).is_err());
    }

    #[test]
    fn noiseless_mixed_puts_half_on_the_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inst = generate_mixed_with_sigma(50, 1, 0.0, &mut rng).unwrap();
        let last = inst.coords()[49];
        let same = inst.coords().iter().filter(|&&p| p == last).count();
        assert_eq!(same, 25);
    }

    #[test]
    fn clustered_points_are_closer_together() {
        fn mean_nn(inst: &Instance) -> f64 {
            let n = inst.n();
            (0..n)
                .map(|i| {
                    (0..n)
                        .filter(|&j| j != i)
                        .map(|j| inst.dist(i, j))
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / n as f64
        }
        let (mut clustered, mut uniform) = (0.0, 0.0);
        for seed in 0..50 {
            clustered += mean_nn(&generate_clustered(100, 10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap());
            uniform += mean_nn(&generate_uniform(100, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap());
        }
        assert!(clustered < uniform, "{} vs {}", clustered, uniform);
    }

    #[test]
    fn cvrp_demands_are_normalized_integers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = generate_cvrp(20, &mut rng).unwrap();
        assert_eq!(inst.n(), 21);
        assert_eq!(inst.depot(), Some(0));
        let d = inst.demands().unwrap();
        assert_eq!(d[0], 0.0);
        let allowed: Vec<f64> = (1..=9).map(|k| k as f64 / 30.0).collect();
        assert!(d[1..].iter().all(|v| allowed.contains(v)));
        let raw_total: f64 = d.iter().map(|v| v * 30.0).sum();
        assert!(raw_total <= 9.0 * 20.0 + 1e-9);
    }

    #[test]
    fn capacity_table() {
        assert_eq!(cvrp_capacity(20), 30);
        assert_eq!(cvrp_capacity(50), 40);
        assert_eq!(cvrp_capacity(100), 50);
        assert_eq!(cvrp_capacity(10), 30);
        assert_eq!(cvrp_capacity(35), 35);
        assert_eq!(cvrp_capacity(75), 45);
        assert_eq!(cvrp_capacity(200), 70);
    }
}
