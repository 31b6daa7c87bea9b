//! Points, tangent vectors, rotations and plane-cut circles on the unit sphere.
//!
//! Everything here is plain `f64` ambient arithmetic. Unit-norm tolerances are
//! fixed once: `UNIT_TOL` for values received from a caller, `CONSTRUCT_TOL`
//! for values this crate builds itself.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize, Serializer};
use std::ops::{Add, Mul, Neg, Sub};

/// Unit-norm tolerance for caller-supplied points and normals.
pub const UNIT_TOL: f64 = 1e-9;
/// Unit-norm tolerance for values constructed inside the crate.
pub const CONSTRUCT_TOL: f64 = 1e-12;
/// Vectors shorter than this cannot be normalized.
pub const ZERO_VECTOR_TOL: f64 = 1e-12;

/// Ambient 3-vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn normalize(self) -> Result<Vec3> {
        let n = self.norm();
        if n <= ZERO_VECTOR_TOL {
            return Err(Error::ZeroVector);
        }
        Ok(self * (1.0 / n))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// 3x3 real matrix, row major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Mat3 {
    pub rows: [[f64; 3]; 3],
}

impl Mat3 {
    pub const fn new(rows: [[f64; 3]; 3]) -> Self {
        Self { rows }
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let r = &self.rows;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    pub fn transpose(&self) -> Mat3 {
        let r = &self.rows;
        Mat3::new([
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ])
    }

    /// Largest entry of |A + A^T|; zero for a skew-symmetric matrix.
    pub fn skew_defect(&self) -> f64 {
        let t = self.transpose();
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.rows[i][j] + t.rows[i][j]).abs());
            }
        }
        worst
    }

    /// Axis vector of a skew matrix: A p = axis x p.
    pub fn axis(&self) -> Vec3 {
        Vec3::new(self.rows[2][1], self.rows[0][2], self.rows[1][0])
    }

    /// Skew matrix of the cross product: skew(w) p = w x p.
    pub fn skew(w: Vec3) -> Mat3 {
        Mat3::new([[0.0, -w.z, w.y], [w.z, 0.0, -w.x], [-w.y, w.x, 0.0]])
    }

    /// Rodrigues rotation by `angle` about the unit vector `axis`.
    pub fn rotation(axis: Vec3, angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        let k = Mat3::skew(axis);
        let mut rows = [[0.0; 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                let id = if i == j { 1.0 } else { 0.0 };
                let k2 = (0..3).map(|m| k.rows[i][m] * k.rows[m][j]).sum::<f64>();
                *entry = id + s * k.rows[i][j] + (1.0 - c) * k2;
            }
        }
        Mat3::new(rows)
    }
}

impl From<[[f64; 3]; 3]> for Mat3 {
    fn from(rows: [[f64; 3]; 3]) -> Self {
        Mat3::new(rows)
    }
}

impl From<Mat3> for [[f64; 3]; 3] {
    fn from(m: Mat3) -> Self {
        m.rows
    }
}

/// A point of the unit sphere, kept unit-norm by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint(Vec3);

impl SpherePoint {
    /// Validates the unit-norm invariant within `UNIT_TOL`.
    pub fn new(v: Vec3) -> Result<SpherePoint> {
        if (v.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidSystem(format!(
                "point {:?} is not unit norm",
                v.to_array()
            )));
        }
        Ok(SpherePoint(v))
    }

    pub fn from_coords(x: f64, y: f64, z: f64) -> Result<SpherePoint> {
        SpherePoint::new(Vec3::new(x, y, z))
    }

    pub fn as_vec(self) -> Vec3 {
        self.0
    }

    pub fn to_array(self) -> [f64; 3] {
        self.0.to_array()
    }

    pub fn antipode(self) -> SpherePoint {
        SpherePoint(-self.0)
    }

    /// Geodesic distance in radians.
    pub fn geodesic_distance(self, other: SpherePoint) -> f64 {
        self.0.dot(other.0).clamp(-1.0, 1.0).acos()
    }
}

impl Serialize for SpherePoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

/// A vector tangent to the sphere at `base`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TangentVector {
    pub base: SpherePoint,
    pub v: Vec3,
}

impl TangentVector {
    /// Validates tangency (`<v, base>` = 0) within `UNIT_TOL`.
    pub fn new(base: SpherePoint, v: Vec3) -> Result<TangentVector> {
        let radial = v.dot(base.as_vec()).abs();
        if radial > UNIT_TOL * v.norm().max(1.0) {
            return Err(Error::InvalidSystem(format!(
                "vector {:?} is not tangent at {:?} (radial component {radial:.3e})",
                v.to_array(),
                base.to_array()
            )));
        }
        Ok(TangentVector { base, v })
    }
}

/// Normalize an ambient vector onto the sphere.
///
/// Idempotent on unit vectors; errors on vectors shorter than 1e-12.
pub fn project_to_sphere(v: Vec3) -> Result<SpherePoint> {
    Ok(SpherePoint(v.normalize()?))
}

/// The circle cut from the sphere by the plane `<n, p> = c`.
///
/// Orientation convention: `gamma(p) = <n, p> - c`, so `n` points toward the
/// side where `gamma > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlaneCircle {
    pub normal: Vec3,
    pub offset: f64,
    pub id: u32,
}

impl PlaneCircle {
    pub fn new(normal: Vec3, offset: f64, id: u32) -> Result<PlaneCircle> {
        if (normal.norm() - 1.0).abs() > CONSTRUCT_TOL {
            return Err(Error::InvalidSystem(format!(
                "circle {id}: normal {:?} is not unit",
                normal.to_array()
            )));
        }
        if offset.abs() >= 1.0 {
            return Err(Error::InvalidSystem(format!(
                "circle {id}: |offset| = {} must be < 1",
                offset.abs()
            )));
        }
        Ok(PlaneCircle { normal, offset, id })
    }

    /// Signed level-set value; zero on the circle.
    pub fn gamma(&self, p: Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn radius(&self) -> f64 {
        (1.0 - self.offset * self.offset).sqrt()
    }

    /// Orthonormal frame of the circle plane. For n = (0, 0, +-1) the frame is
    /// ((1,0,0), (0,1,0)); otherwise e1 = normalize(n x z), e2 = n x e1.
    pub fn frame(&self) -> (Vec3, Vec3) {
        let n = self.normal;
        if n.x.abs() <= CONSTRUCT_TOL && n.y.abs() <= CONSTRUCT_TOL {
            (Vec3::X, Vec3::Y)
        } else {
            let e1 = n.cross(Vec3::Z).normalize().expect("normal not parallel to z");
            let e2 = n.cross(e1);
            (e1, e2)
        }
    }

    /// Point at angle `phi` on the circle, measured in the plane frame.
    pub fn param(&self, phi: f64) -> SpherePoint {
        let (e1, e2) = self.frame();
        let r = self.radius();
        let v = self.normal * self.offset + (e1 * phi.cos() + e2 * phi.sin()) * r;
        SpherePoint(v)
    }

    /// Angle of a point on (or near) the circle, in [0, 2pi).
    pub fn phi_of(&self, p: Vec3) -> f64 {
        let (e1, e2) = self.frame();
        let w = p - self.normal * self.offset;
        let phi = w.dot(e2).atan2(w.dot(e1));
        if phi < 0.0 {
            phi + std::f64::consts::TAU
        } else {
            phi
        }
    }

    /// Unit tangent of the circle at angle `phi`, pointing toward increasing phi.
    pub fn tangent(&self, phi: f64) -> Vec3 {
        let (e1, e2) = self.frame();
        e1 * (-phi.sin()) + e2 * phi.cos()
    }

    /// Snap a nearby ambient point exactly onto the circle.
    pub fn snap(&self, p: Vec3) -> SpherePoint {
        self.param(self.phi_of(p))
    }

    /// Geodesic distance from `p` to the nearest point of the circle.
    pub fn distance_to(&self, p: SpherePoint) -> f64 {
        let polar = self.normal.dot(p.as_vec()).clamp(-1.0, 1.0).acos();
        let circle_polar = self.offset.clamp(-1.0, 1.0).acos();
        (polar - circle_polar).abs()
    }
}

/// Free-function form of `PlaneCircle::param`, matching the operation name.
pub fn circle_param(circle: &PlaneCircle, phi: f64) -> SpherePoint {
    circle.param(phi)
}
