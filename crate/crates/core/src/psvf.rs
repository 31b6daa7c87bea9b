//! Piecewise-smooth vector fields on the sphere: region fields, switching
//! circles, the region decomposition, and compactly supported perturbations.

use crate::error::{Error, Result};
use crate::sphere::{PlaneCircle, SpherePoint, TangentVector, Vec3, Mat3, CONSTRUCT_TOL};
use serde::{Deserialize, Serialize};

/// Gamma values smaller than this put a point on the switching manifold.
pub const ON_SIGMA_TOL: f64 = 1e-12;

/// Linear field p -> A p with skew-symmetric A, so values are tangent to the
/// sphere and the flow is a rigid rotation about `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearField {
    matrix: Mat3,
}

impl LinearField {
    pub fn new(matrix: Mat3) -> Result<LinearField> {
        let defect = matrix.skew_defect();
        if defect > CONSTRUCT_TOL {
            return Err(Error::NotSkewSymmetric(defect));
        }
        Ok(LinearField { matrix })
    }

    pub fn from_axis(axis: Vec3) -> LinearField {
        LinearField {
            matrix: Mat3::skew(axis),
        }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.matrix
    }

    /// Rotation axis: A p = axis x p.
    pub fn axis(&self) -> Vec3 {
        self.matrix.axis()
    }

    pub fn eval(&self, p: Vec3) -> Vec3 {
        self.matrix.mul_vec(p)
    }
}

/// Compactly supported C^1 perturbation added to one region field.
///
/// The added vector at p is the tangential projection of
/// `psi(dist(p, center)) * direction` with profile
/// `psi(r) = amplitude * (1 - (r/radius)^2)^2` for r < radius, else zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpPerturbation {
    pub center: Vec3,
    pub radius: f64,
    pub direction: Vec3,
    pub amplitude: f64,
}

impl BumpPerturbation {
    pub fn new(center: SpherePoint, radius: f64, direction: Vec3, amplitude: f64) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::InvalidSystem("bump radius must be positive".into()));
        }
        let direction = direction.normalize()?;
        Ok(BumpPerturbation {
            center: center.as_vec(),
            radius,
            direction,
            amplitude,
        })
    }

    fn profile(&self, r: f64) -> f64 {
        if r >= self.radius {
            0.0
        } else {
            let u = 1.0 - (r / self.radius) * (r / self.radius);
            self.amplitude * u * u
        }
    }

    /// Value of the bump field at an ambient point.
    pub fn eval(&self, p: Vec3) -> Vec3 {
        let cosr = self.center.dot(p).clamp(-1.0, 1.0);
        let r = cosr.acos();
        if r >= self.radius {
            return Vec3::ZERO;
        }
        let psi = self.profile(r);
        let tangential = self.direction - p * self.direction.dot(p);
        tangential * psi
    }

    /// Directional derivative of the bump field, central differences.
    pub fn dir_derivative(&self, p: Vec3, v: Vec3) -> Vec3 {
        let h = 1e-6;
        let vn = v.norm();
        if vn <= 1e-300 {
            return Vec3::ZERO;
        }
        let step = v * (h / vn);
        (self.eval(p + step) - self.eval(p - step)) * (vn / (2.0 * h))
    }

    /// Sup norm of the added field, by dense sampling of the support.
    pub fn sup_norm(&self) -> f64 {
        let mut worst: f64 = 0.0;
        // center itself plus rings of the geodesic ball
        worst = worst.max(self.eval(self.center).norm());
        let e1 = orthonormal_to(self.center);
        let e2 = self.center.cross(e1);
        for i in 1..=24 {
            let r = self.radius * i as f64 / 25.0;
            for j in 0..48 {
                let ang = std::f64::consts::TAU * j as f64 / 48.0;
                let dir = e1 * ang.cos() + e2 * ang.sin();
                let p = self.center * r.cos() + dir * r.sin();
                worst = worst.max(self.eval(p).norm());
            }
        }
        worst
    }
}

fn orthonormal_to(v: Vec3) -> Vec3 {
    let trial = if v.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
    v.cross(trial).normalize().expect("nonzero by construction")
}

/// A region field: a skew-linear base, optionally perturbed by bumps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Field {
    pub label: String,
    base: LinearField,
    bumps: Vec<BumpPerturbation>,
}

impl Field {
    pub fn linear(label: impl Into<String>, base: LinearField) -> Field {
        Field {
            label: label.into(),
            base,
            bumps: Vec::new(),
        }
    }

    pub fn base(&self) -> &LinearField {
        &self.base
    }

    pub fn bumps(&self) -> &[BumpPerturbation] {
        &self.bumps
    }

    pub fn is_linear(&self) -> bool {
        self.bumps.is_empty()
    }

    pub fn with_bump(&self, bump: BumpPerturbation) -> Field {
        let mut bumps = self.bumps.clone();
        bumps.push(bump);
        Field {
            label: format!("{}+bump", self.label),
            base: self.base,
            bumps,
        }
    }

    pub fn negated(&self) -> Field {
        let m = self.base.matrix().rows;
        let neg = Mat3::new(m.map(|row| row.map(|e| -e)));
        Field {
            label: format!("-{}", self.label),
            base: LinearField { matrix: neg },
            bumps: self
                .bumps
                .iter()
                .map(|b| BumpPerturbation {
                    amplitude: -b.amplitude,
                    ..*b
                })
                .collect(),
        }
    }

    /// Field value at an ambient point.
    pub fn eval(&self, p: Vec3) -> Vec3 {
        let mut v = self.base.eval(p);
        for b in &self.bumps {
            v = v + b.eval(p);
        }
        v
    }

    /// Field value as a tangent vector at a sphere point.
    pub fn eval_tangent(&self, p: SpherePoint) -> TangentVector {
        let raw = self.eval(p.as_vec());
        // remove the tiny radial component a bump projection can leave
        let v = raw - p.as_vec() * raw.dot(p.as_vec());
        TangentVector { base: p, v }
    }

    /// Directional derivative dF(p)[v]; exact for the linear part.
    pub fn dir_derivative(&self, p: Vec3, v: Vec3) -> Vec3 {
        let mut d = self.base.eval(v);
        for b in &self.bumps {
            d = d + b.dir_derivative(p, v);
        }
        d
    }

    /// True when all bumps vanish identically within `margin` of `p`.
    pub fn is_linear_near(&self, p: Vec3, margin: f64) -> bool {
        self.bumps.iter().all(|b| {
            let r = b.center.dot(p).clamp(-1.0, 1.0).acos();
            r > b.radius + margin
        })
    }
}

/// Evaluate a field at a sphere point. Operation form of `Field::eval_tangent`.
pub fn eval_field(field: &Field, p: SpherePoint) -> TangentVector {
    field.eval_tangent(p)
}

/// One connected region: its sign vector over the circles and its field.
#[derive(Debug, Clone, Serialize)]
pub struct Region {
    pub signs: Vec<i8>,
    pub field: Field,
}

/// A piecewise-smooth vector field on the sphere.
#[derive(Debug, Clone, Serialize)]
pub struct Psvf {
    circles: Vec<PlaneCircle>,
    regions: Vec<Region>,
}

impl Psvf {
    pub fn new(circles: Vec<PlaneCircle>, regions: Vec<Region>) -> Result<Psvf> {
        if circles.is_empty() {
            return Err(Error::InvalidSystem("at least one circle required".into()));
        }
        if regions.is_empty() {
            return Err(Error::InvalidSystem("at least one region required".into()));
        }
        for r in &regions {
            if r.signs.len() != circles.len() {
                return Err(Error::InvalidSystem(format!(
                    "region sign vector length {} does not match circle count {}",
                    r.signs.len(),
                    circles.len()
                )));
            }
            if r.signs.iter().any(|s| *s != 1 && *s != -1) {
                return Err(Error::InvalidSystem("region signs must be +1 or -1".into()));
            }
        }
        for (i, a) in circles.iter().enumerate() {
            for b in circles.iter().skip(i + 1) {
                if circles_intersect(a, b) {
                    return Err(Error::InvalidSystem(format!(
                        "circles {} and {} intersect on the sphere",
                        a.id, b.id
                    )));
                }
            }
        }
        let psvf = Psvf { circles, regions };
        psvf.check_coverage()?;
        Ok(psvf)
    }

    /// Every sampled off-circle point must land in exactly one region, and both
    /// sides of every circle must have a region.
    fn check_coverage(&self) -> Result<()> {
        let n = 400;
        for i in 0..n {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let phi = 2.399963229728653 * i as f64;
            let r = (1.0 - z * z).sqrt();
            let p = Vec3::new(r * phi.cos(), r * phi.sin(), z);
            if self.circles.iter().any(|c| c.gamma(p).abs() <= 1e-6) {
                continue;
            }
            let signs: Vec<i8> = self
                .circles
                .iter()
                .map(|c| if c.gamma(p) > 0.0 { 1 } else { -1 })
                .collect();
            let hits = self.regions.iter().filter(|r| r.signs == signs).count();
            if hits != 1 {
                return Err(Error::InvalidSystem(format!(
                    "sign vector {signs:?} maps to {hits} regions"
                )));
            }
        }
        for (ci, c) in self.circles.iter().enumerate() {
            for k in 0..8 {
                let p = c.param(std::f64::consts::TAU * k as f64 / 8.0);
                self.side_region(ci, p.as_vec(), 1)?;
                self.side_region(ci, p.as_vec(), -1)?;
            }
        }
        Ok(())
    }

    pub fn circles(&self) -> &[PlaneCircle] {
        &self.circles
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn circle(&self, idx: usize) -> &PlaneCircle {
        &self.circles[idx]
    }

    pub fn circle_index_by_id(&self, id: u32) -> Result<usize> {
        self.circles
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::InvalidSystem(format!("no circle with id {id}")))
    }

    pub fn gamma(&self, circle_idx: usize, p: Vec3) -> f64 {
        self.circles[circle_idx].gamma(p)
    }

    /// Region containing `p`; errors when `p` sits on a circle.
    pub fn region_of(&self, p: SpherePoint) -> Result<usize> {
        let v = p.as_vec();
        let mut signs = Vec::with_capacity(self.circles.len());
        for c in &self.circles {
            let g = c.gamma(v);
            if g.abs() <= ON_SIGMA_TOL {
                return Err(Error::OnSwitchingManifold {
                    circle: c.id,
                    gamma: g.abs(),
                });
            }
            signs.push(if g > 0.0 { 1 } else { -1 });
        }
        self.region_by_signs(&signs)
    }

    fn region_by_signs(&self, signs: &[i8]) -> Result<usize> {
        self.regions
            .iter()
            .position(|r| r.signs == signs)
            .ok_or_else(|| Error::InvalidSystem(format!("no region with signs {signs:?}")))
    }

    /// Region adjacent to circle `circle_idx` on the given side (+1 above, -1
    /// below), at the location of the circle point `p`.
    pub fn side_region(&self, circle_idx: usize, p: Vec3, side: i8) -> Result<usize> {
        let mut signs = Vec::with_capacity(self.circles.len());
        for (j, c) in self.circles.iter().enumerate() {
            if j == circle_idx {
                signs.push(side);
            } else {
                let g = c.gamma(p);
                signs.push(if g > 0.0 { 1 } else { -1 });
            }
        }
        self.region_by_signs(&signs)
    }

    /// Fields adjacent to a circle at `p`: (above = gamma > 0 side, below).
    pub fn fields_at(&self, circle_idx: usize, p: Vec3) -> Result<(&Field, &Field)> {
        let above = self.side_region(circle_idx, p, 1)?;
        let below = self.side_region(circle_idx, p, -1)?;
        Ok((&self.regions[above].field, &self.regions[below].field))
    }

    pub fn field_of(&self, region: usize) -> &Field {
        &self.regions[region].field
    }

    /// Human-facing region name, 1-based to match the circle ids.
    pub fn region_label(&self, region: usize) -> String {
        format!("R{}", region + 1)
    }

    /// System with every field negated (time reversal).
    pub fn negated(&self) -> Psvf {
        Psvf {
            circles: self.circles.clone(),
            regions: self
                .regions
                .iter()
                .map(|r| Region {
                    signs: r.signs.clone(),
                    field: r.field.negated(),
                })
                .collect(),
        }
    }

    /// Equilibria of each region field together with a realness flag.
    ///
    /// A skew-linear field vanishes at the two antipodal axis points; the
    /// equilibrium is real when it lies in the closure of the field's region.
    pub fn equilibria(&self) -> Vec<Equilibrium> {
        let mut out = Vec::new();
        for (ri, region) in self.regions.iter().enumerate() {
            let axis = region.field.base().axis();
            let Ok(unit) = axis.normalize() else {
                continue; // zero field has no isolated equilibria
            };
            for p in [unit, -unit] {
                let real = self.point_in_region_closure(p, ri);
                out.push(Equilibrium {
                    point: p,
                    region: ri,
                    real,
                    on_sigma: self.circles.iter().any(|c| c.gamma(p).abs() <= 1e-9),
                });
            }
        }
        out
    }

    /// Whether `p` lies in the closed region (boundary circles included).
    pub fn point_in_region_closure(&self, p: Vec3, region: usize) -> bool {
        self.regions[region]
            .signs
            .iter()
            .zip(&self.circles)
            .all(|(s, c)| {
                let g = c.gamma(p);
                g.abs() <= 1e-9 || (g > 0.0) == (*s > 0)
            })
    }
}

/// A region-field equilibrium and whether it is real for its region.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Equilibrium {
    pub point: Vec3,
    pub region: usize,
    pub real: bool,
    pub on_sigma: bool,
}

fn circles_intersect(a: &PlaneCircle, b: &PlaneCircle) -> bool {
    let cross = a.normal.cross(b.normal);
    let cn = cross.norm();
    if cn < 1e-12 {
        // parallel planes: same circle counts as intersecting
        let same_side = a.normal.dot(b.normal) > 0.0;
        let cb = if same_side { b.offset } else { -b.offset };
        return (a.offset - cb).abs() < 1e-12;
    }
    // intersection line of the two planes: q + t * cross, q in span(n1, n2)
    let d = a.normal.dot(b.normal);
    let det = 1.0 - d * d;
    let alpha = (a.offset - b.offset * d) / det;
    let beta = (b.offset - a.offset * d) / det;
    let q = a.normal * alpha + b.normal * beta;
    q.norm_sq() <= 1.0
}

/// Three-zone rotation family: caps above z = 1/2 and below z = -1/2 carry the
/// field (z, 0, -x); the band carries the rotation with axis
/// (0, -cos theta, sin theta). Valid for 0 < theta < pi.
pub fn make_z_theta(theta: f64) -> Result<Psvf> {
    if !(theta > 0.0 && theta < std::f64::consts::PI) {
        return Err(Error::InvalidAngle(theta));
    }
    let c1 = PlaneCircle::new(Vec3::Z, 0.5, 1)?;
    let c2 = PlaneCircle::new(Vec3::Z, -0.5, 2)?;
    let cap = Field::linear("X", LinearField::from_axis(Vec3::Y));
    let band = Field::linear(
        "Y_theta",
        LinearField::from_axis(Vec3::new(0.0, -theta.cos(), theta.sin())),
    );
    Psvf::new(
        vec![c1, c2],
        vec![
            Region { signs: vec![1, 1], field: cap.clone() },
            Region { signs: vec![-1, 1], field: band },
            Region { signs: vec![-1, -1], field: cap },
        ],
    )
}

/// Returns the perturbed system and the sup norm of the added field.
///
/// The bump support must lie in the interior of the named region, away from
/// every switching circle.
pub fn apply_bump(psvf: &Psvf, bump: &BumpPerturbation, region: usize) -> Result<(Psvf, f64)> {
    if region >= psvf.regions().len() {
        return Err(Error::InvalidSystem(format!("no region {region}")));
    }
    let center = SpherePoint::new(bump.center)?;
    for c in psvf.circles() {
        if c.distance_to(center) <= bump.radius {
            return Err(Error::SupportTouchesSigma(c.id));
        }
    }
    match psvf.region_of(center) {
        Ok(r) if r == region => {}
        _ => return Err(Error::SupportOutsideRegion(region)),
    }
    let mut regions = psvf.regions().to_vec();
    regions[region].field = regions[region].field.with_bump(*bump);
    let out = Psvf {
        circles: psvf.circles().to_vec(),
        regions,
    };
    Ok((out, bump.sup_norm()))
}

// ---------------------------------------------------------------------------
// JSON system definitions
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SystemDoc {
    Builtin(BuiltinDoc),
    Explicit(ExplicitDoc),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BuiltinDoc {
    builtin: String,
    theta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplicitDoc {
    circles: Vec<CircleDoc>,
    regions: Vec<RegionDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CircleDoc {
    normal: [f64; 3],
    offset: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionDoc {
    signs: Vec<i8>,
    field: FieldDoc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldDoc {
    matrix: [[f64; 3]; 3],
}

/// Parse a system from its JSON document form.
///
/// Accepts either the explicit `{"circles": [...], "regions": [...]}` shape or
/// the shorthand `{"builtin": "z-theta", "theta": ...}`.
pub fn psvf_from_json(text: &str) -> Result<Psvf> {
    let doc: SystemDoc = serde_json::from_str(text)?;
    match doc {
        SystemDoc::Builtin(b) => {
            if b.builtin != "z-theta" {
                return Err(Error::InvalidSystem(format!(
                    "unknown builtin '{}'",
                    b.builtin
                )));
            }
            make_z_theta(b.theta)
        }
        SystemDoc::Explicit(e) => {
            let circles = e
                .circles
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let n = Vec3::from(c.normal).normalize()?;
                    PlaneCircle::new(n, c.offset, i as u32 + 1)
                })
                .collect::<Result<Vec<_>>>()?;
            let regions = e
                .regions
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    Ok(Region {
                        signs: r.signs,
                        field: Field::linear(
                            format!("F{}", i + 1),
                            LinearField::new(Mat3::new(r.field.matrix))?,
                        ),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Psvf::new(circles, regions)
        }
    }
}
