//! Convex bounding hull of the visible content plus a far bounding sphere.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::{contract, ContractedPoint};
use crate::math::Vec3;
use crate::rng::{substream, uniform_unit_vector};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct HullConfig {
    pub planes: usize,
    /// Fraction of points each plane, and the hull as a whole, must keep.
    pub coverage: f64,
    pub inflation: f64,
    /// World-space radius of the bounding sphere.
    pub sphere_radius: f64,
    pub seed: u64,
}

impl Default for HullConfig {
    fn default() -> Self {
        Self {
            planes: 32,
            coverage: 0.9975,
            inflation: 1.025,
            sphere_radius: 500.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

/// Intersection of half-spaces `normal . q <= offset` in contracted space.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingHull {
    pub planes: Vec<Plane>,
    pub sphere_radius: f64,
    /// Per-plane quantile actually used to reach the joint coverage target.
    pub quantile: f64,
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl BoundingHull {
    /// Only the bounding sphere, no planes.
    pub fn sphere_only(sphere_radius: f64) -> Self {
        Self {
            planes: Vec::new(),
            sphere_radius,
            quantile: 1.0,
        }
    }

    /// Fits plane offsets to contracted points. Each offset is a per-plane
    /// quantile of the projections; the quantile starts at `coverage` and is
    /// raised until the intersection keeps `coverage` of the points. The
    /// planes are then pushed out by `inflation` about the points' centroid.
    pub fn fit(points: &[Vec3], config: &HullConfig) -> Result<Self> {
        if !(config.coverage > 0.0 && config.coverage <= 1.0) || !(config.inflation >= 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "hull coverage {} / inflation {} out of range",
                config.coverage,
                config.inflation
            )));
        }
        if points.is_empty() || config.planes == 0 {
            return Ok(Self::sphere_only(config.sphere_radius));
        }
        let mut rng = substream(config.seed, "bake/hull");
        let normals: Vec<Vec3> = (0..config.planes).map(|_| uniform_unit_vector(&mut rng)).collect();
        let projections: Vec<Vec<f64>> = normals
            .iter()
            .map(|n| {
                let mut p: Vec<f64> = points.iter().map(|q| n.dot(*q)).collect();
                p.sort_by(f64::total_cmp);
                p
            })
            .collect();
        let offsets_at = |q: f64| -> Vec<f64> { projections.iter().map(|p| quantile_sorted(p, q)).collect() };
        let covered = |offsets: &[f64]| -> f64 {
            let inside = points
                .iter()
                .filter(|q| normals.iter().zip(offsets).all(|(n, d)| n.dot(**q) <= *d))
                .count();
            inside as f64 / points.len() as f64
        };
        let mut quantile = config.coverage;
        if covered(&offsets_at(quantile)) < config.coverage {
            let (mut lo, mut hi) = (config.coverage, 1.0);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if covered(&offsets_at(mid)) >= config.coverage {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            quantile = hi;
        }
        let offsets = offsets_at(quantile);
        let centroid = points.iter().fold(Vec3::ZERO, |a, &b| a + b) / points.len() as f64;
        let planes = normals
            .into_iter()
            .zip(offsets)
            .map(|(normal, d)| {
                let c = normal.dot(centroid);
                Plane {
                    normal,
                    offset: c + config.inflation * (d - c),
                }
            })
            .collect();
        Ok(Self {
            planes,
            sphere_radius: config.sphere_radius,
            quantile,
        })
    }

    /// Signed distance-like value, positive inside the hull.
    pub fn inside_value(&self, q: Vec3) -> f64 {
        self.planes
            .iter()
            .map(|p| p.offset - p.normal.dot(q))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, q: Vec3) -> bool {
        self.inside_value(q) >= 0.0
    }

    /// Radius of the bounding sphere in contracted space.
    pub fn contracted_sphere_radius(&self) -> f64 {
        contract(Vec3::new(self.sphere_radius, 0.0, 0.0)).norm()
    }

    /// Positive inside the contracted bounding sphere.
    pub fn sphere_value(&self, q: Vec3) -> f64 {
        self.contracted_sphere_radius() - q.norm()
    }

    /// `min(f, hull, sphere)`: everything outside the bounding geometry is
    /// treated as solid, so extracted surfaces close off there.
    pub fn clamp(&self, f: f64, q: ContractedPoint) -> f64 {
        f.min(self.inside_value(q.0)).min(self.sphere_value(q.0))
    }

    pub fn coverage(&self, points: &[Vec3]) -> f64 {
        if points.is_empty() {
            return 1.0;
        }
        points.iter().filter(|q| self.contains(**q)).count() as f64 / points.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform_in_ball;

    fn cube_centers(n: usize, h: f64) -> Vec<Vec3> {
        let mut v = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    v.push(Vec3::new(i as f64, j as f64, k as f64) * h - Vec3::splat(0.5 * h * (n - 1) as f64));
                }
            }
        }
        v
    }

    #[test]
    fn small_cube_corners_inside_after_fit() {
        let pts = cube_centers(7, 0.05);
        let hull = BoundingHull::fit(&pts, &HullConfig::default()).unwrap();
        assert_eq!(hull.planes.len(), 32);
        let c = 0.15;
        for sx in [-c, c] {
            for sy in [-c, c] {
                for sz in [-c, c] {
                    assert!(hull.contains(Vec3::new(sx, sy, sz)));
                }
            }
        }
    }

    #[test]
    fn joint_coverage_reached_before_inflation() {
        let mut rng = substream(4, "pts");
        let pts: Vec<Vec3> = (0..20_000).map(|_| uniform_in_ball(&mut rng, 0.8)).collect();
        let cfg = HullConfig { inflation: 1.0, ..HullConfig::default() };
        let hull = BoundingHull::fit(&pts, &cfg).unwrap();
        assert!(hull.coverage(&pts) >= 0.9975);
        assert!(hull.quantile >= 0.9975);
        let inflated = BoundingHull::fit(&pts, &HullConfig::default()).unwrap();
        assert!(inflated.coverage(&pts) >= hull.coverage(&pts));
    }

    #[test]
    fn clamp_semantics() {
        let pts = cube_centers(5, 0.1);
        let hull = BoundingHull::fit(&pts, &HullConfig::default()).unwrap();
        let far = ContractedPoint::new(1.2, 0.0, 0.0);
        let f_far = 0.9;
        // outside the hull: forced solid
        assert!(hull.clamp(f_far, far) < 0.0);
        assert_eq!(hull.clamp(f_far, far), hull.inside_value(far.0));
        // well inside: unchanged
        assert_eq!(hull.clamp(0.01, ContractedPoint::new(0.0, 0.0, 0.0)), 0.01);
        assert!((hull.contracted_sphere_radius() - (2.0 - 1.0 / 500.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_input_gives_sphere_only() {
        let hull = BoundingHull::fit(&[], &HullConfig::default()).unwrap();
        assert!(hull.planes.is_empty());
        assert_eq!(hull.clamp(0.3, ContractedPoint::new(0.0, 0.5, 0.0)), 0.3);
    }
}
