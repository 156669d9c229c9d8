//! Per-instance inputs to the encoder.
//!
//! The canonical featurizer only emits distances measured after moving the
//! centroid to the origin and dividing by the largest pairwise distance, so
//! rotating, translating or uniformly scaling an instance cannot change what
//! the network sees. Values are snapped to a 2^-24 grid so that the
//! rounding noise of a transformed copy almost always vanishes and the
//! features come out bit-identical.

use std::fmt::Debug;
use std::sync::Arc;

use mres_core::{Instance, ProblemKind};
use mres_tensor::Tensor;

use crate::{PolicyError, Result};

const GRID: f64 = (1u64 << 24) as f64;

fn snap(v: f64) -> f64 {
    (v * GRID).round() / GRID
}

/// Encoder inputs for one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantFeatures {
    /// `n x f` per-node scalars.
    pub node_scalars: Tensor,
    /// `n x n` pairwise distances.
    pub pair_dists: Tensor,
    /// Factor the raw distances were divided by.
    pub scale: f64,
}

impl InvariantFeatures {
    pub fn n(&self) -> usize {
        self.pair_dists.rows()
    }

    pub fn dist_row(&self, i: usize) -> &[f64] {
        self.pair_dists.row_slice(i)
    }
}

pub trait Featurizer: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// Width of the per-node scalar block for `kind`.
    fn node_dim(&self, kind: ProblemKind) -> usize;

    fn featurize(&self, inst: &Instance) -> Result<InvariantFeatures>;
}

/// Distance-only features of the centred, unit-diameter instance.
#[derive(Clone, Copy, Debug, Default)]
pub struct Canonical;

/// Raw coordinates and unnormalized distances; deliberately not invariant.
#[derive(Clone, Copy, Debug, Default)]
pub struct RawCoordinates;

fn cvrp_extras(inst: &Instance, i: usize) -> [f64; 2] {
    let depot = if inst.depot() == Some(i) { 1.0 } else { 0.0 };
    [inst.demand(i), depot]
}

fn extra_dims(kind: ProblemKind) -> usize {
    match kind {
        ProblemKind::Tsp => 0,
        ProblemKind::Cvrp => 2,
    }
}

/// Canonical features of `inst`.
pub fn canonicalize(inst: &Instance) -> Result<InvariantFeatures> {
    Canonical.featurize(inst)
}

impl Featurizer for Canonical {
    fn name(&self) -> &'static str {
        "invariant"
    }

    fn node_dim(&self, kind: ProblemKind) -> usize {
        1 + extra_dims(kind)
    }

    fn featurize(&self, inst: &Instance) -> Result<InvariantFeatures> {
        let n = inst.n();
        let c = inst.centroid();
        let mut dists = vec![0.0; n * n];
        let mut scale: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let d = inst.dist(i, j);
                dists[i * n + j] = d;
                dists[j * n + i] = d;
                scale = scale.max(d);
            }
        }
        if !(scale > 0.0) {
            return Err(PolicyError::Degenerate("all points coincide".into()));
        }
        dists.iter_mut().for_each(|d| *d = snap(*d / scale));
        let width = self.node_dim(inst.kind());
        let mut scalars = Vec::with_capacity(n * width);
        for (i, p) in inst.coords().iter().enumerate() {
            scalars.push(snap(p.dist(c) / scale));
            if inst.is_cvrp() {
                scalars.extend(cvrp_extras(inst, i));
            }
        }
        Ok(InvariantFeatures {
            node_scalars: Tensor::matrix(n, width, scalars)?,
            pair_dists: Tensor::matrix(n, n, dists)?,
            scale,
        })
    }
}

impl Featurizer for RawCoordinates {
    fn name(&self) -> &'static str {
        "raw"
    }

    fn node_dim(&self, kind: ProblemKind) -> usize {
        2 + extra_dims(kind)
    }

    fn featurize(&self, inst: &Instance) -> Result<InvariantFeatures> {
        let n = inst.n();
        let dists = (0..n * n).map(|k| inst.dist(k / n, k % n)).collect();
        let width = self.node_dim(inst.kind());
        let mut scalars = Vec::with_capacity(n * width);
        for (i, p) in inst.coords().iter().enumerate() {
            scalars.extend([p.x, p.y]);
            if inst.is_cvrp() {
                scalars.extend(cvrp_extras(inst, i));
            }
        }
        Ok(InvariantFeatures {
            node_scalars: Tensor::matrix(n, width, scalars)?,
            pair_dists: Tensor::matrix(n, n, dists)?,
            scale: 1.0,
        })
    }
}

/// Looks a featurizer up by name.
pub fn featurizer_by_name(name: &str) -> Result<Arc<dyn Featurizer>> {
    match name {
        "invariant" => Ok(Arc::new(Canonical)),
        "raw" => Ok(Arc::new(RawCoordinates)),
        _ => Err(PolicyError::invalid(format!(
            "unknown featurizer {:?} (expected invariant or raw)",
            name
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mres_core::{apply_transform, Point, TransformSpec};

    fn inst(points: &[(f64, f64)]) -> Instance {
        Instance::tsp(points.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn collinear_pair_dists() {
        let f = canonicalize(&inst(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])).unwrap();
        assert_eq!(f.pair_dists.data(), &[0.0, 0.5, 1.0, 0.5, 0.0, 0.5, 1.0, 0.5, 0.0]);
        assert_eq!(f.scale, 2.0);
        assert_eq!(f.node_scalars.data(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn quarter_turn_gives_identical_features() {
        let a = inst(&[(0.1, 0.2), (0.9, 0.35), (0.4, 0.8), (0.7, 0.05), (0.33, 0.61)]);
        let spec = TransformSpec::Rotation { center: Point::new(0.5, 0.5), degrees: 90.0 };
        let b = apply_transform(&a, &spec).unwrap();
        assert_eq!(canonicalize(&a).unwrap(), canonicalize(&b).unwrap());
    }

    #[test]
    fn scaling_changes_only_the_scale() {
        let a = inst(&[(0.1, 0.2), (0.9, 0.35), (0.4, 0.8), (0.7, 0.05)]);
        let b = apply_transform(&a, &TransformSpec::Scaling { factor: 0.9 }).unwrap();
        let (fa, fb) = (canonicalize(&a).unwrap(), canonicalize(&b).unwrap());
        assert_eq!(fa.pair_dists, fb.pair_dists);
        assert_eq!(fa.node_scalars, fb.node_scalars);
        assert!((fb.scale / fa.scale - 0.9).abs() < 1e-12);
    }

    #[test]
    fn coincident_points_rejected() {
        let a = inst(&[(0.3, 0.3), (0.3, 0.3), (0.3, 0.3)]);
        assert!(matches!(canonicalize(&a), Err(PolicyError::Degenerate(_))));
    }

    #[test]
    fn ranges() {
        let a = inst(&[(0.0, 0.0), (3.0, 1.0), (2.0, 5.0), (-1.0, 2.0)]);
        let f = canonicalize(&a).unwrap();
        assert!(f.node_scalars.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(f.pair_dists.data().iter().cloned().fold(0.0, f64::max), 1.0);
        for i in 0..4 {
            assert_eq!(f.pair_dists.get(i, i), 0.0);
            for j in 0..4 {
                assert_eq!(f.pair_dists.get(i, j), f.pair_dists.get(j, i));
            }
        }
    }
}
