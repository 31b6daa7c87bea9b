//! Pointwise analysis on the switching manifold: Lie derivatives, region
//! classification, the sliding vector field, and tangency classification.
//!
//! With a = <F_above(p), n> and b = <F_below(p), n> on a circle point p:
//! crossing when a*b > 0, sliding when a < 0 < b (both fields point at the
//! circle), escaping when b < 0 < a, tangency when either magnitude falls
//! under `TANGENCY_TOL`.

use crate::error::{Error, Result};
use crate::psvf::{Field, Psvf};
use crate::sphere::{SpherePoint, TangentVector, Vec3};
use serde::Serialize;
use std::f64::consts::TAU;

/// Normal components below this count as tangent.
pub const TANGENCY_TOL: f64 = 1e-10;
/// Lie derivatives below this are treated as zero when resolving contact order.
pub const CONTACT_TOL: f64 = 1e-8;
/// Highest contact order the classifier resolves.
pub const MAX_CONTACT_ORDER: u32 = 4;
/// A query point must satisfy |gamma| <= this to count as on the circle.
pub const OFF_CIRCLE_TOL: f64 = 1e-9;
/// Tangency roots of the two sides closer than this (in phi) are merged.
pub const ROOT_MERGE_TOL: f64 = 1e-8;
/// Denominator floor for the sliding-field convex combination.
pub const DENOM_TOL: f64 = 1e-12;

/// Classification of a switching-manifold point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionClass {
    Crossing,
    Sliding,
    Escaping,
    Tangency(TangentSide),
}

/// Which adjacent field is tangent at the point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TangentSide {
    Above,
    Below,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Visible,
    Invisible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DoubleType {
    None,
    Elliptic,
    Hyperbolic,
    Parabolic,
}

/// Contact data of one tangent side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideContact {
    /// Smallest k with a nonvanishing k-th Lie derivative.
    pub order: u32,
    /// Value of that derivative.
    pub value: f64,
    pub visibility: Visibility,
}

/// A classified tangency point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TangencyInfo {
    pub point: SpherePoint,
    pub circle: u32,
    /// Angle of the point on its circle.
    pub phi: f64,
    /// Contact of the field on the gamma > 0 side, when tangent.
    pub above: Option<SideContact>,
    /// Contact of the field on the gamma < 0 side, when tangent.
    pub below: Option<SideContact>,
    pub double_type: DoubleType,
}

impl TangencyInfo {
    pub fn is_double(&self) -> bool {
        self.above.is_some() && self.below.is_some()
    }

    /// Sides whose tangent arc stays in its own region (candidate exits).
    pub fn visible_sides(&self) -> Vec<i8> {
        let mut out = Vec::new();
        if let Some(c) = self.above {
            if c.visibility == Visibility::Visible {
                out.push(1);
            }
        }
        if let Some(c) = self.below {
            if c.visibility == Visibility::Visible {
                out.push(-1);
            }
        }
        out
    }
}

fn check_on_circle(psvf: &Psvf, circle_idx: usize, p: Vec3) -> Result<()> {
    let g = psvf.gamma(circle_idx, p);
    if g.abs() > OFF_CIRCLE_TOL {
        return Err(Error::OffCircle {
            circle: psvf.circle(circle_idx).id,
            gamma: g.abs(),
        });
    }
    Ok(())
}

/// k-th Lie derivative of the circle level set along `field` at `p`.
///
/// Order 1 is `<F(p), n>`. For linear fields order k is `<A^k p, n>`, exact;
/// perturbed fields fall back to central differences along the field once the
/// exact directional derivative runs out (order >= 3), except near the
/// switching manifold where bumps vanish and the linear path applies.
pub fn lie_derivative(
    field: &Field,
    psvf: &Psvf,
    circle_idx: usize,
    p: SpherePoint,
    order: u32,
) -> Result<f64> {
    if order == 0 || order > MAX_CONTACT_ORDER {
        return Err(Error::OrderTooHigh(order));
    }
    check_on_circle(psvf, circle_idx, p.as_vec())?;
    let n = psvf.circle(circle_idx).normal;
    Ok(lie_derivative_raw(field, n, p.as_vec(), order))
}

/// Same computation without the on-circle precondition; gamma is a global
/// function so the iterated derivative makes sense off the circle too.
pub(crate) fn lie_derivative_raw(field: &Field, n: Vec3, p: Vec3, order: u32) -> f64 {
    if field.is_linear() || field.is_linear_near(p, 0.05) {
        // <A^k p, n>
        let mut v = p;
        for _ in 0..order {
            v = field.base().eval(v);
        }
        return v.dot(n);
    }
    match order {
        1 => field.eval(p).dot(n),
        2 => field.dir_derivative(p, field.eval(p)).dot(n),
        k => {
            // nabla L_{k-1} . F by central differences along the field
            let f = field.eval(p);
            let fn_ = f.norm();
            if fn_ <= 1e-300 {
                return 0.0;
            }
            let h = 1e-6;
            let step = f * (h / fn_);
            let hi = lie_derivative_raw(field, n, p + step, k - 1);
            let lo = lie_derivative_raw(field, n, p - step, k - 1);
            (hi - lo) / (2.0 * h) * fn_
        }
    }
}

/// Normal components (a, b) of the two adjacent fields at a circle point.
pub fn normal_components(psvf: &Psvf, circle_idx: usize, p: Vec3) -> Result<(f64, f64)> {
    let n = psvf.circle(circle_idx).normal;
    let (above, below) = psvf.fields_at(circle_idx, p)?;
    Ok((above.eval(p).dot(n), below.eval(p).dot(n)))
}

fn classify_from_components(a: f64, b: f64) -> RegionClass {
    let ta = a.abs() <= TANGENCY_TOL;
    let tb = b.abs() <= TANGENCY_TOL;
    match (ta, tb) {
        (true, true) => RegionClass::Tangency(TangentSide::Both),
        (true, false) => RegionClass::Tangency(TangentSide::Above),
        (false, true) => RegionClass::Tangency(TangentSide::Below),
        (false, false) => {
            if a * b > 0.0 {
                RegionClass::Crossing
            } else if a < 0.0 {
                RegionClass::Sliding
            } else {
                RegionClass::Escaping
            }
        }
    }
}

/// Classify a point of the switching manifold.
pub fn classify_sigma_point(psvf: &Psvf, circle_idx: usize, p: SpherePoint) -> Result<RegionClass> {
    check_on_circle(psvf, circle_idx, p.as_vec())?;
    let (a, b) = normal_components(psvf, circle_idx, p.as_vec())?;
    Ok(classify_from_components(a, b))
}

/// Convenience: classification from raw components, used by samplers.
pub fn classify_components(a: f64, b: f64) -> RegionClass {
    classify_from_components(a, b)
}

/// The Filippov sliding vector field at a circle point.
///
/// Returns `(b F_above - a F_below) / (b - a)`, the convex combination of the
/// adjacent fields tangent to the circle. At tangency points where a and b
/// both vanish the limit along the circle is used (the extended field).
pub fn sliding_field_at(psvf: &Psvf, circle_idx: usize, p: SpherePoint) -> Result<TangentVector> {
    check_on_circle(psvf, circle_idx, p.as_vec())?;
    let v = sliding_field_vec(psvf, circle_idx, p.as_vec())?;
    Ok(TangentVector { base: p, v })
}

pub(crate) fn sliding_field_vec(psvf: &Psvf, circle_idx: usize, p: Vec3) -> Result<Vec3> {
    let n = psvf.circle(circle_idx).normal;
    let (above, below) = psvf.fields_at(circle_idx, p)?;
    let fa = above.eval(p);
    let fb = below.eval(p);
    let a = fa.dot(n);
    let b = fb.dot(n);
    if (a - b).abs() >= DENOM_TOL {
        return Ok((fa * b - fb * a) * (1.0 / (b - a)));
    }
    if a.abs() > TANGENCY_TOL {
        // both fields cross with identical normal speed: no convex combination
        return Err(Error::DegenerateDenominator);
    }
    // double tangency: take the limit along the circle using d/dphi of a and b
    let circle = psvf.circle(circle_idx);
    let phi = circle.phi_of(p);
    let h = 1e-6;
    let q_hi = circle.param(phi + h).as_vec();
    let q_lo = circle.param(phi - h).as_vec();
    let (a_hi, b_hi) = normal_components(psvf, circle_idx, q_hi)?;
    let (a_lo, b_lo) = normal_components(psvf, circle_idx, q_lo)?;
    let da = (a_hi - a_lo) / (2.0 * h);
    let db = (b_hi - b_lo) / (2.0 * h);
    if (da - db).abs() < DENOM_TOL {
        return Err(Error::DegenerateDenominator);
    }
    Ok((fa * db - fb * da) * (1.0 / (db - da)))
}

/// Signed angular speed of the sliding field along the circle at angle phi.
pub(crate) fn sliding_speed(psvf: &Psvf, circle_idx: usize, phi: f64) -> Result<f64> {
    let circle = psvf.circle(circle_idx);
    let p = circle.param(phi);
    let v = sliding_field_vec(psvf, circle_idx, p.as_vec())?;
    Ok(v.dot(circle.tangent(phi)) / circle.radius())
}

/// Classify the tangency structure at a circle point.
///
/// Contact order per tangent side is the smallest k <= 4 whose Lie derivative
/// exceeds `CONTACT_TOL`. Visibility of an even-order contact is side aware:
/// the side's field is visible exactly when the sign of the order-k value
/// matches the sign of gamma on that field's own region. Odd contact is
/// always visible.
pub fn classify_tangency(psvf: &Psvf, circle_idx: usize, p: SpherePoint) -> Result<TangencyInfo> {
    check_on_circle(psvf, circle_idx, p.as_vec())?;
    let circle = psvf.circle(circle_idx);
    let n = circle.normal;
    let (above, below) = psvf.fields_at(circle_idx, p.as_vec())?;

    let above_contact = side_contact(above, n, p.as_vec(), 1)?;
    let below_contact = side_contact(below, n, p.as_vec(), -1)?;
    if above_contact.is_none() && below_contact.is_none() {
        return Err(Error::InvalidSystem(
            "point is not a tangency of either adjacent field".into(),
        ));
    }
    let double_type = match (above_contact, below_contact) {
        (Some(a), Some(b)) => match (a.visibility, b.visibility) {
            (Visibility::Invisible, Visibility::Invisible) => DoubleType::Elliptic,
            (Visibility::Visible, Visibility::Visible) => DoubleType::Hyperbolic,
            _ => DoubleType::Parabolic,
        },
        _ => DoubleType::None,
    };
    Ok(TangencyInfo {
        point: circle.snap(p.as_vec()),
        circle: circle.id,
        phi: circle.phi_of(p.as_vec()),
        above: above_contact,
        below: below_contact,
        double_type,
    })
}

fn side_contact(field: &Field, n: Vec3, p: Vec3, region_sign: i8) -> Result<Option<SideContact>> {
    let first = lie_derivative_raw(field, n, p, 1);
    if first.abs() > TANGENCY_TOL {
        return Ok(None); // transversal on this side
    }
    for k in 2..=MAX_CONTACT_ORDER {
        let value = lie_derivative_raw(field, n, p, k);
        if value.abs() > CONTACT_TOL {
            let visibility = if k % 2 == 1 {
                Visibility::Visible
            } else if value.signum() == region_sign as f64 {
                Visibility::Visible
            } else {
                Visibility::Invisible
            };
            return Ok(Some(SideContact {
                order: k,
                value,
                visibility,
            }));
        }
    }
    Err(Error::ContactOrderUnresolved)
}

/// Number of samples used when scanning a circle for roots.
const SCAN_SAMPLES: usize = 1440;

/// All tangency points of the two adjacent fields on a circle, classified.
///
/// Roots of both normal components are located by dense sampling plus
/// bisection, then merged when coincident.
pub fn find_tangencies(psvf: &Psvf, circle_idx: usize) -> Result<Vec<TangencyInfo>> {
    let circle = psvf.circle(circle_idx);
    let above = |phi: f64| -> Result<f64> {
        Ok(normal_components(psvf, circle_idx, circle.param(phi).as_vec())?.0)
    };
    let below = |phi: f64| -> Result<f64> {
        Ok(normal_components(psvf, circle_idx, circle.param(phi).as_vec())?.1)
    };
    let mut roots = scan_roots(&above, circle.id)?;
    roots.extend(scan_roots(&below, circle.id)?);
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut merged: Vec<f64> = Vec::new();
    for phi in roots {
        let coincides = merged.iter().any(|m| {
            let d = (phi - m).abs();
            d <= ROOT_MERGE_TOL || (TAU - d) <= ROOT_MERGE_TOL
        });
        if !coincides {
            merged.push(phi);
        }
    }
    merged
        .into_iter()
        .map(|phi| classify_tangency(psvf, circle_idx, circle.param(phi)))
        .collect()
}

/// Roots of a scalar function over [0, 2pi), with a flat-arc guard.
fn scan_roots(f: &dyn Fn(f64) -> Result<f64>, circle_id: u32) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(SCAN_SAMPLES + 1);
    for i in 0..=SCAN_SAMPLES {
        let phi = TAU * i as f64 / SCAN_SAMPLES as f64;
        values.push((phi, f(phi)?));
    }
    let flat = values.windows(3).any(|w| w.iter().all(|(_, v)| v.abs() < 1e-12));
    if flat {
        return Err(Error::NonIsolatedTangency(circle_id));
    }
    let mut roots = Vec::new();
    for w in values.windows(2) {
        let (phi0, v0) = w[0];
        let (phi1, v1) = w[1];
        if v0 == 0.0 {
            roots.push(phi0 % TAU);
        } else if v0 * v1 < 0.0 {
            roots.push(bisect(f, phi0, phi1, v0, 1e-10)?);
        }
    }
    Ok(roots)
}

fn bisect(
    f: &dyn Fn(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    v_lo: f64,
    tol: f64,
) -> Result<f64> {
    let mut sign_lo = v_lo.signum();
    for _ in 0..100 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let v = f(mid)?;
        if v == 0.0 {
            return Ok(mid);
        }
        if v.signum() == sign_lo {
            lo = mid;
            sign_lo = v.signum();
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Zeros of the sliding field on the sliding and escaping segments.
pub fn pseudo_equilibria(psvf: &Psvf, circle_idx: usize) -> Result<Vec<SpherePoint>> {
    let circle = psvf.circle(circle_idx);
    let mut out: Vec<SpherePoint> = Vec::new();
    let speed_at = |phi: f64| -> Result<f64> { sliding_speed(psvf, circle_idx, phi) };
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=SCAN_SAMPLES {
        let phi = TAU * i as f64 / SCAN_SAMPLES as f64;
        let p = circle.param(phi);
        let (a, b) = normal_components(psvf, circle_idx, p.as_vec())?;
        let class = classify_from_components(a, b);
        let interior = matches!(class, RegionClass::Sliding | RegionClass::Escaping);
        if !interior {
            prev = None;
            continue;
        }
        let s = speed_at(phi)?;
        if let Some((phi0, s0)) = prev {
            if s0 * s < 0.0 {
                let root = bisect(&speed_at, phi0, phi, s0, 1e-13)?;
                let q = circle.param(root);
                // on the circle the field has no normal or radial part, so the
                // tangential zero is a zero of the whole sliding field
                let v = sliding_field_vec(psvf, circle_idx, q.as_vec())?;
                if v.norm() < 1e-10 && !out.iter().any(|r| r.geodesic_distance(q) < 1e-6) {
                    out.push(q);
                }
            }
        }
        prev = Some((phi, s));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psvf::make_z_theta;
    use crate::sphere::SpherePoint;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_3;

    fn z3() -> Psvf {
        make_z_theta(FRAC_PI_3).unwrap()
    }

    fn pt(x: f64, y: f64, z: f64) -> SpherePoint {
        SpherePoint::from_coords(x, y, z).unwrap()
    }

    const S3H: f64 = 0.866_025_403_784_438_6; // sqrt(3)/2

    #[test]
    fn first_lie_derivative_of_cap_field() {
        let psvf = z3();
        // X on the upper circle: order 1 is -x
        for phi in [0.1, 1.3, 2.2, 4.0, 5.9] {
            let p = psvf.circle(0).param(phi);
            let d = lie_derivative(psvf.field_of(0), &psvf, 0, p, 1).unwrap();
            assert_abs_diff_eq!(d, -p.as_vec().x, epsilon = 1e-14);
        }
    }

    #[test]
    fn second_lie_derivative_at_tangency() {
        let psvf = z3();
        let p = pt(0.0, S3H, 0.5);
        let d = lie_derivative(psvf.field_of(0), &psvf, 0, p, 2).unwrap();
        assert_abs_diff_eq!(d, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn band_field_first_derivative_is_half_x() {
        let psvf = z3();
        for phi in [0.0, 0.7, 2.9, 4.4] {
            let p = psvf.circle(0).param(phi);
            let d = lie_derivative(psvf.field_of(1), &psvf, 0, p, 1).unwrap();
            assert_abs_diff_eq!(d, p.as_vec().x / 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn off_circle_and_order_bounds_rejected() {
        let psvf = z3();
        let p = pt(0.0, 0.0, 1.0);
        assert!(matches!(
            lie_derivative(psvf.field_of(0), &psvf, 0, p, 1),
            Err(Error::OffCircle { .. })
        ));
        let q = psvf.circle(0).param(0.3);
        assert!(matches!(
            lie_derivative(psvf.field_of(0), &psvf, 0, q, 5),
            Err(Error::OrderTooHigh(5))
        ));
    }

    #[test]
    fn classification_on_upper_circle() {
        let psvf = z3();
        assert_eq!(
            classify_sigma_point(&psvf, 0, pt(S3H, 0.0, 0.5)).unwrap(),
            RegionClass::Sliding
        );
        assert_eq!(
            classify_sigma_point(&psvf, 0, pt(-S3H, 0.0, 0.5)).unwrap(),
            RegionClass::Escaping
        );
        assert_eq!(
            classify_sigma_point(&psvf, 0, pt(0.0, S3H, 0.5)).unwrap(),
            RegionClass::Tangency(TangentSide::Both)
        );
    }

    #[test]
    fn sliding_field_closed_form_on_upper_circle() {
        let psvf = z3();
        let p = pt(S3H, 0.0, 0.5);
        let v = sliding_field_at(&psvf, 0, p).unwrap().v;
        assert_abs_diff_eq!(v.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.y, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn extended_field_at_double_tangency() {
        let psvf = z3();
        let p = pt(0.0, -S3H, -0.5);
        let v = sliding_field_at(&psvf, 1, p).unwrap().v;
        assert_abs_diff_eq!(v.x, 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(v.y, 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(v.z, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn sliding_field_is_tangent_and_radial_free() {
        let psvf = z3();
        for circle_idx in 0..2 {
            for k in 0..64 {
                let phi = TAU * (k as f64 + 0.31) / 64.0;
                let p = psvf.circle(circle_idx).param(phi);
                if classify_sigma_point(&psvf, circle_idx, p).unwrap()
                    == RegionClass::Tangency(TangentSide::Both)
                {
                    continue;
                }
                let v = sliding_field_at(&psvf, circle_idx, p).unwrap().v;
                assert!(v.dot(psvf.circle(circle_idx).normal).abs() < 1e-10);
                assert!(v.dot(p.as_vec()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn four_tangencies_total_with_expected_locations() {
        let psvf = z3();
        let upper = find_tangencies(&psvf, 0).unwrap();
        let lower = find_tangencies(&psvf, 1).unwrap();
        assert_eq!(upper.len(), 2);
        assert_eq!(lower.len(), 2);
        let mut expected = vec![
            Vec3::new(0.0, S3H, 0.5),
            Vec3::new(0.0, -S3H, 0.5),
            Vec3::new(0.0, S3H, -0.5),
            Vec3::new(0.0, -S3H, -0.5),
        ];
        for t in upper.iter().chain(lower.iter()) {
            assert!(t.is_double());
            let pos = expected
                .iter()
                .position(|e| (*e - t.point.as_vec()).norm() < 1e-9);
            assert!(pos.is_some(), "unexpected tangency at {:?}", t.point);
            expected.remove(pos.unwrap());
        }
        assert!(expected.is_empty());
    }

    #[test]
    fn visibility_pattern_of_the_four_tangencies() {
        let psvf = z3();
        // T1+ = (0, s, 1/2): invisible for the cap field, visible for the band
        let t1p = classify_tangency(&psvf, 0, pt(0.0, S3H, 0.5)).unwrap();
        assert_eq!(t1p.above.unwrap().visibility, Visibility::Invisible);
        assert_eq!(t1p.below.unwrap().visibility, Visibility::Visible);
        assert_eq!(t1p.double_type, DoubleType::Parabolic);
        assert_abs_diff_eq!(t1p.above.unwrap().value, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t1p.below.unwrap().value, -0.5, epsilon = 1e-12);

        // T1- = (0, -s, 1/2): invisible for both, elliptic
        let t1m = classify_tangency(&psvf, 0, pt(0.0, -S3H, 0.5)).unwrap();
        assert_eq!(t1m.above.unwrap().visibility, Visibility::Invisible);
        assert_eq!(t1m.below.unwrap().visibility, Visibility::Invisible);
        assert_eq!(t1m.double_type, DoubleType::Elliptic);
        assert_abs_diff_eq!(t1m.below.unwrap().value, 0.25, epsilon = 1e-12);

        // antipodes mirror: T2- parabolic with the band side visible, T2+ elliptic
        let t2m = classify_tangency(&psvf, 1, pt(0.0, -S3H, -0.5)).unwrap();
        assert_eq!(t2m.double_type, DoubleType::Parabolic);
        assert_eq!(t2m.above.unwrap().visibility, Visibility::Visible); // band is above circle 2
        assert_eq!(t2m.below.unwrap().visibility, Visibility::Invisible);
        let t2p = classify_tangency(&psvf, 1, pt(0.0, S3H, -0.5)).unwrap();
        assert_eq!(t2p.double_type, DoubleType::Elliptic);
    }

    #[test]
    fn no_pseudo_equilibria_in_the_rotation_family() {
        let psvf = z3();
        assert!(pseudo_equilibria(&psvf, 0).unwrap().is_empty());
        assert!(pseudo_equilibria(&psvf, 1).unwrap().is_empty());
    }

    #[test]
    fn pseudo_equilibria_found_when_tangential_components_oppose() {
        use crate::psvf::{Field, LinearField, Region};
        use crate::sphere::PlaneCircle;
        // two rotations whose sliding combination reverses direction on the circle
        let circle = PlaneCircle::new(
            Vec3::new(0.25, 0.0, 1.0).normalize().unwrap(),
            0.15,
            1,
        )
        .unwrap();
        let f_above = Field::linear("A", LinearField::from_axis(Vec3::new(0.0, 0.3, 1.0)));
        let f_below = Field::linear("B", LinearField::from_axis(Vec3::new(0.2, -0.1, -0.9)));
        let psvf = Psvf::new(
            vec![circle],
            vec![
                Region { signs: vec![1], field: f_above },
                Region { signs: vec![-1], field: f_below },
            ],
        )
        .unwrap();
        // oracle: brute-force sign change of the tangential speed on slide/escape arcs
        let mut sign_change = false;
        let mut prev: Option<f64> = None;
        for i in 0..=2000 {
            let phi = TAU * i as f64 / 2000.0;
            let p = psvf.circle(0).param(phi);
            let class = classify_sigma_point(&psvf, 0, p).unwrap();
            if !matches!(class, RegionClass::Sliding | RegionClass::Escaping) {
                prev = None;
                continue;
            }
            let s = sliding_speed(&psvf, 0, phi).unwrap();
            if let Some(s0) = prev {
                if s0 * s < 0.0 {
                    sign_change = true;
                }
            }
            prev = Some(s);
        }
        assert!(sign_change, "test system should have an opposing tangential component");
        let roots = pseudo_equilibria(&psvf, 0).unwrap();
        assert!(!roots.is_empty());
        for r in &roots {
            let v = sliding_field_vec(&psvf, 0, r.as_vec()).unwrap();
            assert!(v.norm() < 1e-9, "|Z_sigma| = {} at root", v.norm());
        }
        // time reversal preserves the zero set
        let neg = psvf.negated();
        let neg_roots = pseudo_equilibria(&neg, 0).unwrap();
        assert_eq!(roots.len(), neg_roots.len());
        for r in &roots {
            assert!(neg_roots.iter().any(|q| q.geodesic_distance(*r) < 1e-6));
        }
    }

    #[test]
    fn identical_fields_make_the_denominator_degenerate() {
        use crate::psvf::{Field, LinearField, Region};
        use crate::sphere::PlaneCircle;
        let circle = PlaneCircle::new(Vec3::Z, 0.0, 1).unwrap();
        let f = Field::linear("R", LinearField::from_axis(Vec3::X));
        let psvf = Psvf::new(
            vec![circle],
            vec![
                Region { signs: vec![1], field: f.clone() },
                Region { signs: vec![-1], field: f },
            ],
        )
        .unwrap();
        // a = b everywhere; the convex combination is undefined off tangencies
        let p = psvf.circle(0).param(0.9);
        assert!(matches!(
            sliding_field_at(&psvf, 0, p),
            Err(Error::DegenerateDenominator)
        ));
    }

    #[test]
    fn field_tangent_along_an_arc_is_rejected() {
        use crate::psvf::{Field, LinearField, Region};
        use crate::sphere::PlaneCircle;
        // rotation about z preserves z, so it is tangent along every z circle
        let circle = PlaneCircle::new(Vec3::Z, 0.3, 1).unwrap();
        let psvf = Psvf::new(
            vec![circle],
            vec![
                Region {
                    signs: vec![1],
                    field: Field::linear("Rz", LinearField::from_axis(Vec3::Z)),
                },
                Region {
                    signs: vec![-1],
                    field: Field::linear("Rx", LinearField::from_axis(Vec3::X)),
                },
            ],
        )
        .unwrap();
        assert!(matches!(
            find_tangencies(&psvf, 0),
            Err(Error::NonIsolatedTangency(1))
        ));
    }

    #[test]
    fn contact_order_unresolved_at_an_equilibrium_on_sigma() {
        // at theta = pi/6 the band equilibrium sits exactly on the upper
        // circle, where every Lie derivative of the band field vanishes
        let psvf = make_z_theta(std::f64::consts::FRAC_PI_6).unwrap();
        let eq = pt(0.0, -S3H, 0.5);
        assert!(psvf.field_of(1).eval(eq.as_vec()).norm() < 1e-12);
        assert!(matches!(
            classify_tangency(&psvf, 0, eq),
            Err(Error::ContactOrderUnresolved)
        ));
    }

    #[test]
    fn adjacent_fields_consistent_with_displaced_region_lookup() {
        let psvf = z3();
        for ci in 0..2 {
            for k in 0..32 {
                let phi = TAU * (k as f64 + 0.3) / 32.0;
                let p = psvf.circle(ci).param(phi);
                let n = psvf.circle(ci).normal;
                let above = psvf.side_region(ci, p.as_vec(), 1).unwrap();
                let below = psvf.side_region(ci, p.as_vec(), -1).unwrap();
                let up = crate::sphere::project_to_sphere(p.as_vec() + n * 1e-6).unwrap();
                let down = crate::sphere::project_to_sphere(p.as_vec() - n * 1e-6).unwrap();
                assert_eq!(psvf.region_of(up).unwrap(), above);
                assert_eq!(psvf.region_of(down).unwrap(), below);
            }
        }
    }

    #[test]
    fn time_reversal_swaps_sliding_and_escaping() {
        let psvf = z3();
        let neg = psvf.negated();
        for circle_idx in 0..2 {
            for k in 0..256 {
                let phi = TAU * (k as f64 + 0.5) / 256.0;
                let p = psvf.circle(circle_idx).param(phi);
                let c1 = classify_sigma_point(&psvf, circle_idx, p).unwrap();
                let c2 = classify_sigma_point(&neg, circle_idx, p).unwrap();
                let expected = match c1 {
                    RegionClass::Sliding => RegionClass::Escaping,
                    RegionClass::Escaping => RegionClass::Sliding,
                    other => other,
                };
                assert_eq!(c2, expected);
            }
        }
    }
}
