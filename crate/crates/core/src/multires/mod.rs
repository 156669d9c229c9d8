//! Multiresolution graphs: K-means partitions, induced sub-instances,
//! centroid coarsening, and the L-level chain built from them.

mod hierarchy;
mod kmeans;

pub use hierarchy::{build_hierarchy, build_subgraphs, coarsen, Link, MultiresHierarchy, SubGraph, MIN_LEVEL_NODES};
pub use kmeans::{kmeans, kmeans_traced, KMEANS_MAX_ITERS};

use serde::Serialize;

use crate::{CoreError, Point, Result};

/// A partition of nodes into non-empty clusters with their mean positions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterPartition {
    assignment: Vec<usize>,
    centroids: Vec<Point>,
}

impl ClusterPartition {
    /// Builds a partition from an assignment, computing member means.
    pub fn from_assignment(points: &[Point], assignment: Vec<usize>, k: usize) -> Result<Self> {
        if assignment.len() != points.len() {
            return Err(CoreError::invalid(format!(
                "{} assignments for {} points",
                assignment.len(),
                points.len()
            )));
        }
        if let Some(&bad) = assignment.iter().find(|&&c| c >= k) {
            return Err(CoreError::invalid(format!("cluster id {} out of 0..{}", bad, k)));
        }
        let centroids = member_means(points, &assignment, k);
        let sizes = cluster_sizes(&assignment, k);
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(CoreError::invalid(format!("cluster {} is empty", empty)));
        }
        Ok(ClusterPartition {
            assignment,
            centroids,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn centroids(&self) -> &[Point] {
        &self.centroids
    }

    pub fn sizes(&self) -> Vec<usize> {
        cluster_sizes(&self.assignment, self.k())
    }

    /// Member node indices of cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == c)
            .map(|(i, _)| i)
            .collect()
    }

    /// Within-cluster sum of squared distances to the centroids.
    pub fn wcss(&self, points: &[Point]) -> f64 {
        points
            .iter()
            .zip(&self.assignment)
            .map(|(p, &c)| p.dist2(self.centroids[c]))
            .sum()
    }
}

pub(crate) fn cluster_sizes(assignment: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for &c in assignment {
        sizes[c] += 1;
    }
    sizes
}

/// Arithmetic mean of each cluster's members; empty clusters get the origin.
pub(crate) fn member_means(points: &[Point], assignment: &[usize], k: usize) -> Vec<Point> {
    let mut sums = vec![(0.0, 0.0); k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        sums[c].0 += p.x;
        sums[c].1 += p.y;
        counts[c] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(&(sx, sy), &n)| {
            if n == 0 {
                Point::default()
            } else {
                Point::new(sx / n as f64, sy / n as f64)
            }
        })
        .collect()
}
