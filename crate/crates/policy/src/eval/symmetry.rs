//! Checks that greedy decisions survive rotation, translation and scaling.

use std::io::Write;

use mres_core::{apply_transform, Instance, Point, TransformSpec};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::policy::Policy;
use crate::{PolicyError, Result};

/// Relative tolerance on `transformed / original` length ratios.
pub const RATIO_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryRow {
    pub instance: usize,
    pub transform: String,
    /// Angle, `dx`/`dy` or factor, rendered as text.
    pub parameters: String,
    pub same_actions: bool,
    pub ratio: f64,
    pub expected_ratio: f64,
    pub consistent: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryReport {
    pub rows: Vec<SymmetryRow>,
}

impl SymmetryReport {
    /// Fraction of (instance, transform) checks that passed.
    pub fn consistency(&self) -> f64 {
        self.rows.iter().filter(|r| r.consistent).count() as f64 / self.rows.len() as f64
    }

    pub fn consistency_of(&self, transform: &str) -> f64 {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.transform == transform).collect();
        rows.iter().filter(|r| r.consistent).count() as f64 / rows.len() as f64
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A quarter turn about the unit square's centre, a random shift in
/// `[0, 1]^2` and a random scale in `[0.7, 1.2]`.
pub fn symmetry_transforms(rng: &mut dyn RngCore) -> [TransformSpec; 3] {
    [
        TransformSpec::Rotation {
            center: Point::new(0.5, 0.5),
            degrees: 90.0,
        },
        TransformSpec::Translation {
            dx: rng.gen_range(0.0..=1.0),
            dy: rng.gen_range(0.0..=1.0),
        },
        TransformSpec::Scaling {
            factor: rng.gen_range(0.7..=1.2),
        },
    ]
}

fn parameters(spec: &TransformSpec) -> String {
    match spec {
        TransformSpec::Rotation { center, degrees } => format!("{}deg@({},{})", degrees, center.x, center.y),
        TransformSpec::Translation { dx, dy } => format!("({},{})", dx, dy),
        TransformSpec::Scaling { factor } => format!("{}", factor),
    }
}

/// Greedy-decodes every instance and its three transformed copies and
/// compares node sequences and lengths. Transform parameters are drawn
/// from `rng`, three per instance in dataset order.
pub fn symmetry_suite(policy: &Policy, dataset: &[Instance], rng: &mut dyn RngCore) -> Result<SymmetryReport> {
    if dataset.is_empty() {
        return Err(PolicyError::invalid("empty symmetry set"));
    }
    let mut rows = Vec::with_capacity(3 * dataset.len());
    for (i, inst) in dataset.iter().enumerate() {
        let base = policy.greedy(inst)?;
        for spec in symmetry_transforms(rng) {
            let moved = apply_transform(inst, &spec)?;
            let r = policy.greedy(&moved)?;
            let ratio = r.cost / base.cost;
            let expected = spec.length_factor();
            let same_actions = r.actions == base.actions;
            let consistent = same_actions && ((ratio - expected) / expected).abs() <= RATIO_TOLERANCE;
            rows.push(SymmetryRow {
                instance: i,
                transform: spec.name().into(),
                parameters: parameters(&spec),
                same_actions,
                ratio,
                expected_ratio: expected,
                consistent,
            });
        }
    }
    Ok(SymmetryReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelConfig;
    use crate::rng::derive_rng;
    use mres_core::generate::generate_uniform;
    use mres_core::ProblemKind;

    #[test]
    fn canonical_policy_is_fully_consistent() {
        let policy = Policy::init(&ModelConfig::tiny(ProblemKind::Tsp), 1).unwrap();
        let mut rng = derive_rng(4, &[]);
        let set: Vec<_> = (0..5).map(|_| generate_uniform(12, &mut rng).unwrap()).collect();
        let rep = symmetry_suite(&policy, &set, &mut rng).unwrap();
        assert_eq!(rep.rows.len(), 15);
        assert_eq!(rep.consistency(), 1.0);
        assert_eq!(rep.consistency_of("scaling"), 1.0);
    }

    #[test]
    fn transforms_stay_in_range() {
        let mut rng = derive_rng(9, &[]);
        for _ in 0..200 {
            let [rot, tr, sc] = symmetry_transforms(&mut rng);
            assert_eq!(rot.length_factor(), 1.0);
            match tr {
                TransformSpec::Translation { dx, dy } => assert!((0.0..=1.0).contains(&dx) && (0.0..=1.0).contains(&dy)),
                _ => panic!("expected a translation"),
            }
            assert!((0.7..=1.2).contains(&sc.length_factor()));
        }
    }
}
