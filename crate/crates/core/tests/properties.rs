use bakedsdf_core::appearance::{decode_level, quantize_level, quantize_ste, shade, Lobe, VertexAppearance};
use bakedsdf_core::bake::TriangleMesh;
use bakedsdf_core::field::{contract, density_from_sdf, uncontract, ContractedPoint, DensityParams, SdfField};
use bakedsdf_core::volume::compositing_weights;
use bakedsdf_core::{Rgb, Vec3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn unit() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter("non-zero", |v| v.norm() > 1e-3).prop_map(|v| v.normalized())
}

fn lobe() -> impl Strategy<Value = Lobe> {
    (unit(), vec3(1.0), 0.0..40.0).prop_map(|(mean, c, width)| Lobe { mean, color: c.abs(), width })
}

proptest! {
    #[test]
    fn contraction_is_bounded_direction_preserving_and_invertible(p in vec3(1e4)) {
        let q = contract(p);
        prop_assert!(q.norm() < 2.0);
        if p.norm() > 1e-9 {
            prop_assert!((q.0.normalized() - p.normalized()).norm() < 1e-9);
        }
        if p.norm() < 1e3 {
            let back = uncontract(q).unwrap();
            prop_assert!((back - p).norm() <= 1e-6 * p.norm().max(1.0));
        }
    }

    #[test]
    fn density_decreases_with_distance(a in -1.0..1.0f64, b in -1.0..1.0f64, beta in 1e-3..0.5f64) {
        let params = DensityParams::new(beta).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(density_from_sdf(lo, params) >= density_from_sdf(hi, params));
        prop_assert!(density_from_sdf(hi, params) > 0.0);
    }

    #[test]
    fn compositing_weights_are_a_sub_partition_of_unity(
        samples in prop::collection::vec((0.0..50.0f64, 1e-4..0.1f64), 1..64)
    ) {
        let (densities, deltas): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
        let w = compositing_weights(&densities, &deltas);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!(w.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn shading_ignores_lobe_order(diffuse in vec3(1.0), lobes in prop::collection::vec(lobe(), 0..4), d in unit()) {
        let a = VertexAppearance { diffuse: diffuse.abs(), lobes: lobes.clone() };
        let mut reversed = lobes;
        reversed.reverse();
        let b = VertexAppearance { diffuse: diffuse.abs(), lobes: reversed };
        prop_assert!((shade(&a, d) - shade(&b, d)).norm() < 1e-12);
    }

    #[test]
    fn quantization_levels_are_fixed_points(level in 0u8..=255, lo in -2.0..0.0f64, span in 0.1..50.0f64) {
        let hi = lo + span;
        let x = decode_level(level, lo, hi);
        prop_assert!((lo..=hi).contains(&x));
        prop_assert_eq!(quantize_level(x, lo, hi), level);
        prop_assert_eq!(quantize_ste(x, lo, hi), x);
    }

    #[test]
    fn quantization_error_is_at_most_half_a_step(x in -5.0..5.0f64) {
        let q = quantize_ste(x, -1.0, 1.0);
        prop_assert!((q - x.clamp(-1.0, 1.0)).abs() <= 1.0 / 255.0 + 1e-12);
    }

    #[test]
    fn region_ordering_keeps_every_triangle(
        points in prop::collection::vec(vec3(2.0), 3..24),
        seeds in prop::collection::vec((0usize..1000, 0usize..1000, 0usize..1000), 1..40),
    ) {
        let n = points.len();
        let tris: Vec<[u32; 3]> = seeds.iter().map(|&(a, b, c)| [(a % n) as u32, (b % n) as u32, (c % n) as u32]).collect();
        let mesh = TriangleMesh::new(points, tris).unwrap();
        let (ordered, remap) = mesh.region_ordered();
        prop_assert!(ordered.is_region_ordered());
        let corners = |m: &TriangleMesh| {
            let mut all: Vec<[[u64; 3]; 3]> = (0..m.triangle_count())
                .map(|t| m.corners(t).map(|p| p.to_array().map(f64::to_bits)))
                .collect();
            all.sort();
            all
        };
        prop_assert_eq!(corners(&mesh), corners(&ordered));
        for (old, &new) in remap.iter().enumerate() {
            prop_assert_eq!(mesh.positions[old], ordered.positions[new as usize]);
        }
    }

    #[test]
    fn sphere_sdf_is_exact(c in vec3(0.5), r in 0.1..0.8f64, p in vec3(1.9)) {
        let f = SdfField::sphere(c, r);
        let q = ContractedPoint(p);
        prop_assert!((f.eval(q) - ((p - c).norm() - r)).abs() < 1e-12);
        if (p - c).norm() > 1e-6 {
            prop_assert!((f.gradient(q).norm() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn shading_is_constant_when_widths_vanish() {
    let a = VertexAppearance {
        diffuse: Rgb::new(0.2, 0.3, 0.4),
        lobes: vec![Lobe { mean: Vec3::Z, color: Rgb::splat(0.1), width: 0.0 }; 2],
    };
    for d in [Vec3::X, -Vec3::Z, Vec3::new(0.6, 0.0, 0.8)] {
        assert!((shade(&a, d) - Rgb::new(0.4, 0.5, 0.6)).norm() < 1e-15);
    }
}
