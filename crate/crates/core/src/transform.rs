//! Rigid motions and uniform scalings of an instance's coordinates.

use serde::{Deserialize, Serialize};

use crate::{CoreError, Instance, Point, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum TransformSpec {
    /// Counterclockwise rotation by `degrees` about `center`.
    Rotation { center: Point, degrees: f64 },
    Translation { dx: f64, dy: f64 },
    /// Multiplies every coordinate (and so every distance) by `factor`.
    Scaling { factor: f64 },
}

impl TransformSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TransformSpec::Rotation { .. } => "rotation",
            TransformSpec::Translation { .. } => "translation",
            TransformSpec::Scaling { .. } => "scaling",
        }
    }

    /// Factor by which the transform multiplies distances.
    pub fn length_factor(&self) -> f64 {
        match self {
            TransformSpec::Scaling { factor } => *factor,
            _ => 1.0,
        }
    }

    pub fn apply_point(&self, p: Point) -> Point {
        match *self {
            TransformSpec::Rotation { center, degrees } => {
                let (s, c) = quarter_turn_exact(degrees)
                    .unwrap_or_else(|| degrees.to_radians().sin_cos());
                let (dx, dy) = (p.x - center.x, p.y - center.y);
                Point::new(center.x + c * dx - s * dy, center.y + s * dx + c * dy)
            }
            TransformSpec::Translation { dx, dy } => Point::new(p.x + dx, p.y + dy),
            TransformSpec::Scaling { factor } => Point::new(p.x * factor, p.y * factor),
        }
    }
}

/// Exact (sin, cos) for multiples of 90 degrees.
fn quarter_turn_exact(degrees: f64) -> Option<(f64, f64)> {
    let turns = degrees / 90.0;
    if turns.fract() != 0.0 {
        return None;
    }
    Some(match (turns as i64).rem_euclid(4) {
        0 => (0.0, 1.0),
        1 => (1.0, 0.0),
        2 => (0.0, -1.0),
        _ => (-1.0, 0.0),
    })
}

/// Maps every coordinate through `spec`; demands and depot are untouched.
pub fn apply_transform(inst: &Instance, spec: &TransformSpec) -> Result<Instance> {
    if let TransformSpec::Scaling { factor } = spec {
        if !(*factor > 0.0 && factor.is_finite()) {
            return Err(CoreError::invalid(format!("scale factor {} must be positive", factor)));
        }
    }
    let coords = inst.coords().iter().map(|&p| spec.apply_point(p)).collect();
    inst.with_coords(coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> Instance {
        Instance::tsp(vec![Point::new(1.0, 0.5), Point::new(0.2, 0.3), Point::new(0.9, 0.8)]).unwrap()
    }

    #[test]
    fn quarter_rotation_about_center() {
        let spec = TransformSpec::Rotation {
            center: Point::new(0.5, 0.5),
            degrees: 90.0,
        };
        let out = apply_transform(&tri(), &spec).unwrap();
        assert_eq!(out.coords()[0], Point::new(0.5, 1.0));
    }

    #[test]
    fn zero_translation_is_identity() {
        let out = apply_transform(&tri(), &TransformSpec::Translation { dx: 0.0, dy: 0.0 }).unwrap();
        assert_eq!(out, tri());
    }

    #[test]
    fn scaling_scales_distances() {
        let inst = tri();
        let out = apply_transform(&inst, &TransformSpec::Scaling { factor: 0.7 }).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((out.dist(i, j) - 0.7 * inst.dist(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn non_positive_scale_rejected() {
        assert!(apply_transform(&tri(), &TransformSpec::Scaling { factor: 0.0 }).is_err());
        assert!(apply_transform(&tri(), &TransformSpec::Scaling { factor: -1.0 }).is_err());
    }

    #[test]
    fn general_angle_preserves_distances() {
        let inst = tri();
        let spec = TransformSpec::Rotation {
            center: Point::new(0.3, -2.0),
            degrees: 37.0,
        };
        let out = apply_transform(&inst, &spec).unwrap();
        assert!((out.dist(0, 2) - inst.dist(0, 2)).abs() < 1e-12);
    }
}
