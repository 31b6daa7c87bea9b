//! Cross-module property tests over randomized systems and circle points.

use filippov::classify::{
    classify_sigma_point, normal_components, sliding_field_at, RegionClass,
};
use filippov::psvf::{make_z_theta, Field, LinearField, Psvf, Region};
use filippov::sphere::{PlaneCircle, SpherePoint, Vec3};
use proptest::prelude::*;
use std::f64::consts::TAU;

fn two_zone(axis_above: Vec3, axis_below: Vec3, normal: Vec3, offset: f64) -> Option<Psvf> {
    let n = normal.normalize().ok()?;
    let circle = PlaneCircle::new(n, offset, 1).ok()?;
    Psvf::new(
        vec![circle],
        vec![
            Region {
                signs: vec![1],
                field: Field::linear("A", LinearField::from_axis(axis_above)),
            },
            Region {
                signs: vec![-1],
                field: Field::linear("B", LinearField::from_axis(axis_below)),
            },
        ],
    )
    .ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    /// Every circle point gets exactly one class, and clear normal components
    /// never classify as tangency.
    #[test]
    fn classification_partitions_the_circle(
        theta in 0.15f64..2.9,
        circle in 0usize..2,
        phi in 0.0f64..TAU,
    ) {
        let psvf = make_z_theta(theta).unwrap();
        let p = psvf.circle(circle).param(phi);
        let (a, b) = normal_components(&psvf, circle, p.as_vec()).unwrap();
        let class = classify_sigma_point(&psvf, circle, p).unwrap();
        if a.abs().min(b.abs()) > 1e-10 {
            prop_assert!(!matches!(class, RegionClass::Tangency(_)));
        }
        match class {
            RegionClass::Crossing => prop_assert!(a * b > 0.0),
            RegionClass::Sliding => prop_assert!(a < 0.0 && b > 0.0),
            RegionClass::Escaping => prop_assert!(a > 0.0 && b < 0.0),
            RegionClass::Tangency(_) => prop_assert!(a.abs() <= 1e-10 || b.abs() <= 1e-10),
        }
    }

    /// The sliding field has no component along the circle normal or the
    /// radial direction, wherever it is defined.
    #[test]
    fn sliding_field_lives_in_the_circle_tangent(
        ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
        bx in -1.0f64..1.0, by in -1.0f64..1.0, bz in -1.0f64..1.0,
        nx in -1.0f64..1.0, ny in -1.0f64..1.0, nz in -1.0f64..1.0,
        offset in -0.7f64..0.7,
        phi in 0.0f64..TAU,
    ) {
        let a_axis = Vec3::new(ax, ay, az);
        let b_axis = Vec3::new(bx, by, bz);
        let normal = Vec3::new(nx, ny, nz);
        prop_assume!(a_axis.norm() > 0.1 && b_axis.norm() > 0.1 && normal.norm() > 0.1);
        let Some(psvf) = two_zone(a_axis, b_axis, normal, offset) else {
            return Ok(());
        };
        let p = psvf.circle(0).param(phi);
        if let Ok(v) = sliding_field_at(&psvf, 0, p) {
            prop_assert!(v.v.dot(psvf.circle(0).normal).abs() < 1e-9);
            prop_assert!(v.v.dot(p.as_vec()).abs() < 1e-9);
        }
    }

    /// Time reversal swaps sliding and escaping and fixes the rest, for
    /// arbitrary two-zone rotation systems.
    #[test]
    fn time_reversal_duality_on_random_systems(
        ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
        bx in -1.0f64..1.0, by in -1.0f64..1.0, bz in -1.0f64..1.0,
        offset in -0.6f64..0.6,
        phi in 0.0f64..TAU,
    ) {
        let a_axis = Vec3::new(ax, ay, az);
        let b_axis = Vec3::new(bx, by, bz);
        prop_assume!(a_axis.norm() > 0.1 && b_axis.norm() > 0.1);
        let Some(psvf) = two_zone(a_axis, b_axis, Vec3::Z, offset) else {
            return Ok(());
        };
        let neg = psvf.negated();
        let p = psvf.circle(0).param(phi);
        let class = classify_sigma_point(&psvf, 0, p).unwrap();
        let dual = classify_sigma_point(&neg, 0, p).unwrap();
        let expected = match class {
            RegionClass::Sliding => RegionClass::Escaping,
            RegionClass::Escaping => RegionClass::Sliding,
            other => other,
        };
        prop_assert_eq!(dual, expected);
    }

    /// Region fields of the rotation family are tangent to the sphere at
    /// every sampled point.
    #[test]
    fn fields_are_sphere_tangent(
        theta in 0.15f64..2.9,
        x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
    ) {
        let v = Vec3::new(x, y, z);
        prop_assume!(v.norm() > 1e-3);
        let p = SpherePoint::new(v.normalize().unwrap()).unwrap();
        let psvf = make_z_theta(theta).unwrap();
        for region in 0..3 {
            let f = filippov::psvf::eval_field(psvf.field_of(region), p);
            prop_assert!(f.v.dot(p.as_vec()).abs() < 1e-12);
        }
    }
}
