use rand::Rng;

use super::{cluster_sizes, member_means, ClusterPartition};
use crate::{CoreError, Point, Result};

pub const KMEANS_MAX_ITERS: usize = 100;

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans<R: Rng + ?Sized>(points: &[Point], k: usize, rng: &mut R) -> Result<ClusterPartition> {
    kmeans_traced(points, k, rng).map(|(p, _)| p)
}

/// [`kmeans`] that also returns the within-cluster sum of squares after
/// every Lloyd iteration.
pub fn kmeans_traced<R: Rng + ?Sized>(
    points: &[Point],
    k: usize,
    rng: &mut R,
) -> Result<(ClusterPartition, Vec<f64>)> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(CoreError::invalid(format!("K = {} for {} points", k, n)));
    }
    let mut centroids = seed_plus_plus(points, k, rng);
    let mut assignment = vec![usize::MAX; n];
    let mut trace = Vec::new();

    for _ in 0..KMEANS_MAX_ITERS {
        let next: Vec<usize> = points.iter().map(|&p| nearest(p, &centroids)).collect();
        let changed = next != assignment;
        assignment = next;
        repair_empty(points, &mut assignment, &centroids, k);
        centroids = member_means(points, &assignment, k);
        trace.push(wcss(points, &assignment, &centroids));
        if !changed {
            break;
        }
    }
    let partition = ClusterPartition::from_assignment(points, assignment, k)?;
    Ok((partition, trace))
}

fn wcss(points: &[Point], assignment: &[usize], centroids: &[Point]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| p.dist2(centroids[c]))
        .sum()
}

/// Closest centroid; the lowest id wins ties.
fn nearest(p: Point, centroids: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, &q) in centroids.iter().enumerate() {
        let d = p.dist2(q);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &[Point], k: usize, rng: &mut R) -> Vec<Point> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist2(points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("total > 0 implies a positive weight")
        } else {
            // Every remaining point coincides with a chosen one.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.dist2(points[pick]));
        }
    }
    centroids
}

/// Moves the point farthest from its centroid into each empty cluster,
/// taking only from clusters that keep at least one member.
fn repair_empty(points: &[Point], assignment: &mut [usize], centroids: &[Point], k: usize) {
    let mut sizes = cluster_sizes(assignment, k);
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, &c) in assignment.iter().enumerate() {
            if sizes[c] < 2 {
                continue;
            }
            let d = points[i].dist2(centroids[c]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("k <= n leaves a cluster with two members");
        sizes[assignment[i]] -= 1;
        assignment[i] = empty;
        sizes[empty] = 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Point::new(rng.gen(), rng.gen())).collect()
    }

    #[test]
    fn k_equals_n_is_identity() {
        let pts = random_points(12, 3);
        let p = kmeans(&pts, 12, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(p.sizes().iter().all(|&s| s == 1));
        for (i, &c) in p.assignment().iter().enumerate() {
            assert_eq!(p.centroids()[c], pts[i]);
        }
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let pts = random_points(9, 4);
        let p = kmeans(&pts, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mx = pts.iter().map(|p| p.x).sum::<f64>() / 9.0;
        let my = pts.iter().map(|p| p.y).sum::<f64>() / 9.0;
        assert!((p.centroids()[0].x - mx).abs() < 1e-15);
        assert!((p.centroids()[0].y - my).abs() < 1e-15);
    }

    #[test]
    fn separable_groups() {
        let eps = 1e-3;
        let mut pts = Vec::new();
        for (dx, dy) in [(0.0, 0.0), (eps, 0.0), (0.0, eps), (-eps, -eps)] {
            pts.push(Point::new(dx, dy));
            pts.push(Point::new(1.0 + dx, 1.0 + dy));
        }
        for seed in 0..10 {
            let p = kmeans(&pts, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let a = p.assignment();
            for i in (0..8).step_by(2) {
                assert_eq!(a[i], a[0]);
                assert_eq!(a[i + 1], a[1]);
            }
            assert_ne!(a[0], a[1]);
            let c0 = p.centroids()[a[0]];
            let c1 = p.centroids()[a[1]];
            assert!(c0.dist(Point::new(0.0, 0.0)) < 2.0 * eps);
            assert!(c1.dist(Point::new(1.0, 1.0)) < 2.0 * eps);
        }
    }

    #[test]
    fn duplicate_points_never_leave_empty_clusters() {
        let mut pts = vec![Point::new(0.5, 0.5); 6];
        pts.push(Point::new(0.1, 0.1));
        let p = kmeans(&pts, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(p.sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn too_many_clusters() {
        let pts = random_points(4, 0);
        assert!(kmeans(&pts, 5, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(kmeans(&pts, 0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn objective_is_monotone() {
        for seed in 0..40 {
            let pts = random_points(80, seed);
            let (_, trace) = kmeans_traced(&pts, 7, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", trace);
            }
        }
    }
}
