//! The scene contraction that squashes unbounded space into a ball of radius 2.

use crate::error::{Error, Result};
use crate::math::Vec3;

/// A world-space position. Unbounded.
pub type WorldPoint = Vec3;

/// A position in contracted space. Values produced by [`contract`] always have
/// norm strictly below 2; analytic fields may still be probed anywhere.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContractedPoint(pub Vec3);

impl ContractedPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        ContractedPoint(Vec3::new(x, y, z))
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.0.norm()
    }
}

/// Identity on the closed unit ball, `(2 - 1/|p|) p/|p|` outside it.
#[inline]
pub fn contract(p: WorldPoint) -> ContractedPoint {
    let n = p.norm();
    if n <= 1.0 {
        ContractedPoint(p)
    } else {
        ContractedPoint(p * ((2.0 - 1.0 / n) / n))
    }
}

/// Inverse of [`contract`]. Rejects points on or outside the radius-2 sphere.
pub fn uncontract(q: ContractedPoint) -> Result<WorldPoint> {
    let m = q.norm();
    if !(m < 2.0) {
        return Err(Error::OutOfDomain { norm: m });
    }
    if m <= 1.0 {
        return Ok(q.0);
    }
    let world_norm = 1.0 / (2.0 - m);
    Ok(q.0 * (world_norm / m))
}

/// Scale factor `|d contract / d p|` along the radial direction at world norm `n`.
/// Used to reason about level of detail; equals 1 inside the unit ball.
pub fn radial_derivative(n: f64) -> f64 {
    if n <= 1.0 {
        1.0
    } else {
        1.0 / (n * n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_inside_unit_ball() {
        let q = contract(Vec3::new(0.3, 0.4, 0.0));
        assert_eq!(q.0, Vec3::new(0.3, 0.4, 0.0));
    }

    #[test]
    fn hand_evaluated_point() {
        let q = contract(Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(q.0, Vec3::new(1.5, 0.0, 0.0));
    }

    #[test]
    fn far_points_approach_radius_two() {
        let q = contract(Vec3::new(1e6, 0.0, 0.0));
        assert!((q.0.x - (2.0 - 1e-6)).abs() < 1e-12);
        assert!(q.norm() < 2.0);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(uncontract(ContractedPoint::new(0.5, 0.0, 0.0)).unwrap(), Vec3::new(0.5, 0.0, 0.0));
        let p = uncontract(ContractedPoint::new(1.5, 0.0, 0.0)).unwrap();
        assert!((p.x - 2.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_rejects_boundary() {
        assert!(matches!(
            uncontract(ContractedPoint::new(2.0, 0.0, 0.0)),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(uncontract(ContractedPoint::new(0.0, 3.0, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn contract_bounded_and_direction_preserving(
            x in -1e6f64..1e6, y in -1e6f64..1e6, z in -1e6f64..1e6
        ) {
            let p = Vec3::new(x, y, z);
            let q = contract(p);
            prop_assert!(q.norm() < 2.0);
            // nonnegative multiple of the input
            let c = q.0.cross(p).norm();
            prop_assert!(c <= 1e-9 * p.norm().max(1.0) * q.norm().max(1.0));
            prop_assert!(q.0.dot(p) >= 0.0);
        }

        #[test]
        fn round_trip_through_contracted_space(
            dir in prop::array::uniform3(-1.0f64..1.0), logn in -3.0f64..6.0
        ) {
            let d = Vec3::from(dir);
            prop_assume!(d.norm() > 1e-3);
            let p = d.normalized() * 10f64.powf(logn);
            let back = uncontract(contract(p)).unwrap();
            prop_assert!((back - p).norm() <= 1e-6 * p.norm());
        }
    }
}
