//! Event-driven integration of Filippov orbits: smooth arcs inside regions,
//! sliding arcs on the switching circles, concatenation rules, and finite
//! branch enumeration at points with non-unique forward continuations.

mod drivers;
mod machine;
mod rk;

use crate::classify::TangencyInfo;
use crate::error::Result;
use crate::psvf::{Field, Psvf};
use crate::sphere::{project_to_sphere, SpherePoint};
use serde::Serialize;

pub use machine::{enumerate_branches_with, BranchPoint};

/// Internal machine surface shared with the analysis layer.
pub(crate) mod machine_api {
    pub(crate) use super::machine::{
        branch_choices, default_choice, golden_point, start_state, ChildSpec, Choice, Encounter,
        EncounterHandler, ForcedHandler, Machine,
    };
}

/// Field magnitudes below this halt the orbit at an equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

/// Integration and event-localization options.
#[derive(Debug, Clone, Copy)]
pub struct EngineOpts {
    /// Relative tolerance of the adaptive stepper.
    pub rtol: f64,
    /// Absolute tolerance of the adaptive stepper.
    pub atol: f64,
    /// Maximum spacing of emitted orbit samples.
    pub sample_dt: f64,
    /// |gamma| at a turning point below which contact counts as a graze.
    pub graze_tol: f64,
}

impl Default for EngineOpts {
    fn default() -> Self {
        EngineOpts {
            rtol: 1e-10,
            atol: 1e-12,
            sample_dt: 3e-3,
            graze_tol: 1e-7,
        }
    }
}

impl EngineOpts {
    /// Coarser settings used by the reachability probe, where ball coverage
    /// at radius epsilon does not need tight tolerances.
    pub fn coarse() -> Self {
        EngineOpts {
            rtol: 1e-6,
            atol: 1e-9,
            sample_dt: 0.05,
            graze_tol: 1e-3,
        }
    }
}

/// Which side of a circle, relative to its `gamma > 0` orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Above,
    Below,
}

impl Side {
    pub fn sign(self) -> i8 {
        match self {
            Side::Above => 1,
            Side::Below => -1,
        }
    }
}

/// Sliding modes on a circle segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SlideMode {
    Sliding,
    Escaping,
}

/// What a single orbit arc is doing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ArcMode {
    /// Smooth flow inside a region (region index).
    RegionFlow(usize),
    /// Sliding motion on a circle (circle id).
    SlidingFlow(u32),
    /// Motion on an escaping segment of a circle (circle id).
    EscapingSlide(u32),
}

/// Why an arc ended.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TerminalEvent {
    HitCircle(u32),
    ReachedTangency(TangencyInfo),
    PseudoEquilibrium,
    HorizonReached,
    ExitBranch(Side),
}

/// One arc of a Filippov orbit with its time-ordered samples.
#[derive(Debug, Clone, Serialize)]
pub struct OrbitArc {
    pub mode: ArcMode,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: Vec<(f64, SpherePoint)>,
    pub terminal: TerminalEvent,
}

impl OrbitArc {
    pub fn start_point(&self) -> SpherePoint {
        self.samples.first().expect("arc has samples").1
    }

    pub fn end_point(&self) -> SpherePoint {
        self.samples.last().expect("arc has samples").1
    }
}

/// A branch decision taken while concatenating arcs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Decision {
    StaySliding,
    ExitNow(Side),
    DwellExit { fraction: f64, side: Side },
    ScheduledExit { dwell: f64, side: Side },
    GrazeContinue,
    UniqueExit(Side),
    PassThroughTangency,
    HaltAtTangency,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchRecord {
    pub t: f64,
    pub decision: Decision,
}

/// A maximal computed trajectory: time-ordered arcs plus the decision log.
#[derive(Debug, Clone, Serialize)]
pub struct FilippovOrbit {
    pub start: SpherePoint,
    pub arcs: Vec<OrbitArc>,
    pub branch_log: Vec<BranchRecord>,
}

impl FilippovOrbit {
    pub fn end_time(&self) -> f64 {
        self.arcs.last().map(|a| a.t_end).unwrap_or(0.0)
    }

    pub fn end_point(&self) -> SpherePoint {
        self.arcs.last().map(|a| a.end_point()).unwrap_or(self.start)
    }

    /// Iterate over all samples of all arcs in time order.
    pub fn samples(&self) -> impl Iterator<Item = (f64, SpherePoint)> + '_ {
        self.arcs.iter().flat_map(|a| a.samples.iter().copied())
    }
}

/// Rule applied whenever the orbit occupies an escaping point or enters an
/// escaping segment through its entry tangency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EscapingRule {
    /// Remain on the switching manifold.
    StaySliding,
    /// Leave immediately into the region on the given side.
    ExitNow(Side),
    /// Consume one (dwell time, exit side) entry per escaping encounter.
    Scheduled(Vec<(f64, Side)>),
    /// Replay a recorded decision log verbatim.
    Replay(Vec<Decision>),
}

/// Deterministic branch policy for orbit integration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchPolicy {
    pub escaping: EscapingRule,
    pub seed: u64,
}

impl BranchPolicy {
    pub fn stay() -> Self {
        BranchPolicy {
            escaping: EscapingRule::StaySliding,
            seed: 0,
        }
    }

    pub fn exit_now(side: Side) -> Self {
        BranchPolicy {
            escaping: EscapingRule::ExitNow(side),
            seed: 0,
        }
    }

    pub fn scheduled(entries: Vec<(f64, Side)>) -> Self {
        BranchPolicy {
            escaping: EscapingRule::Scheduled(entries),
            seed: 0,
        }
    }

    /// Replay the branch log of a previously computed orbit.
    pub fn replay(orbit: &FilippovOrbit) -> Self {
        BranchPolicy {
            escaping: EscapingRule::Replay(
                orbit.branch_log.iter().map(|r| r.decision.clone()).collect(),
            ),
            seed: 0,
        }
    }
}

/// Shared integration context: the system, options, and the per-circle
/// tangency catalog (None when a circle has non-isolated tangencies).
pub struct Engine<'a> {
    psvf: &'a Psvf,
    opts: EngineOpts,
    tangencies: Vec<Option<Vec<TangencyInfo>>>,
}

impl<'a> Engine<'a> {
    pub fn new(psvf: &'a Psvf) -> Engine<'a> {
        Engine::with_opts(psvf, EngineOpts::default())
    }

    pub fn with_opts(psvf: &'a Psvf, opts: EngineOpts) -> Engine<'a> {
        let tangencies = (0..psvf.circles().len())
            .map(|i| crate::classify::find_tangencies(psvf, i).ok())
            .collect();
        Engine {
            psvf,
            opts,
            tangencies,
        }
    }

    pub fn psvf(&self) -> &Psvf {
        self.psvf
    }

    pub fn opts(&self) -> &EngineOpts {
        &self.opts
    }

    pub(crate) fn catalog(&self, circle_idx: usize) -> Option<&[TangencyInfo]> {
        self.tangencies[circle_idx].as_deref()
    }

    /// Tangency info at a circle point, preferring the precomputed catalog.
    pub(crate) fn tangency_at(&self, circle_idx: usize, p: SpherePoint) -> Result<TangencyInfo> {
        if let Some(list) = self.catalog(circle_idx) {
            for info in list {
                if info.point.geodesic_distance(p) < 1e-5 {
                    return Ok(*info);
                }
            }
        }
        crate::classify::classify_tangency(self.psvf, circle_idx, p)
    }
}

/// Integrate the region's field from `p` until a circle event, an
/// equilibrium, or the horizon.
pub fn flow_region(psvf: &Psvf, region: usize, p: SpherePoint, horizon: f64) -> Result<OrbitArc> {
    let eng = Engine::new(psvf);
    machine::flow_region_arc(&eng, region, p, horizon)
}

/// Integrate sliding (or escaping-slide) motion on a circle from `p`.
pub fn slide(
    psvf: &Psvf,
    circle_idx: usize,
    p: SpherePoint,
    horizon: f64,
    mode: SlideMode,
) -> Result<OrbitArc> {
    let eng = Engine::new(psvf);
    machine::slide_arc(&eng, circle_idx, p, horizon, mode)
}

/// Concatenate arcs under the Filippov rules from `p` up to `horizon`.
pub fn integrate_orbit(
    psvf: &Psvf,
    p: SpherePoint,
    horizon: f64,
    policy: &BranchPolicy,
) -> Result<FilippovOrbit> {
    let eng = Engine::new(psvf);
    machine::integrate(&eng, p, horizon, policy)
}

/// Enumerate up to `budget` continuations of a prefix ending at a branch
/// point, each extended for `2 pi` time units.
pub fn enumerate_branches(
    psvf: &Psvf,
    prefix: &FilippovOrbit,
    budget: usize,
) -> Result<Vec<FilippovOrbit>> {
    let eng = Engine::new(psvf);
    enumerate_branches_with(&eng, prefix, budget, std::f64::consts::TAU)
}

/// Independent re-check of a computed orbit.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub checked_arcs: usize,
    pub checked_samples: usize,
    pub first_violation: Option<String>,
}

/// Re-checks ODE residuals, sliding-sample classification, endpoint
/// continuity, time monotonicity and the unit-norm invariant.
pub fn validate_orbit(psvf: &Psvf, orbit: &FilippovOrbit) -> ValidationReport {
    let mut checked_samples = 0usize;
    let fail = |msg: String, arcs: usize, samples: usize| ValidationReport {
        pass: false,
        checked_arcs: arcs,
        checked_samples: samples,
        first_violation: Some(msg),
    };

    let mut prev_end: Option<(f64, SpherePoint)> = None;
    for (ai, arc) in orbit.arcs.iter().enumerate() {
        if arc.t_end <= arc.t_start {
            return fail(format!("arc {ai}: t_end <= t_start"), ai, checked_samples);
        }
        if arc.samples.len() < 2 {
            return fail(format!("arc {ai}: fewer than two samples"), ai, checked_samples);
        }
        if let Some((pt, pp)) = prev_end {
            if (arc.t_start - pt).abs() > 1e-9 {
                return fail(
                    format!("arc {ai}: start time {} != previous end {}", arc.t_start, pt),
                    ai,
                    checked_samples,
                );
            }
            if (arc.start_point().as_vec() - pp.as_vec()).norm() > 1e-7 {
                return fail(format!("arc {ai}: endpoint discontinuity"), ai, checked_samples);
            }
        }
        let mut last_t = f64::NEG_INFINITY;
        for &(t, p) in &arc.samples {
            checked_samples += 1;
            if t < last_t {
                return fail(format!("arc {ai}: sample times not ordered"), ai, checked_samples);
            }
            last_t = t;
            if (p.as_vec().norm() - 1.0).abs() > 1e-9 {
                return fail(
                    format!("arc {ai}: sample at t = {t} off the sphere"),
                    ai,
                    checked_samples,
                );
            }
        }
        // midpoint residual against the governing field
        for w in arc.samples.windows(2) {
            let (t0, p0) = w[0];
            let (t1, p1) = w[1];
            let dt = t1 - t0;
            if dt <= 1e-5 {
                continue;
            }
            let mid = match project_to_sphere((p0.as_vec() + p1.as_vec()) * 0.5) {
                Ok(m) => m,
                Err(_) => return fail(format!("arc {ai}: degenerate midpoint"), ai, checked_samples),
            };
            let v = match arc.mode {
                ArcMode::RegionFlow(region) => psvf.field_of(region).eval(mid.as_vec()),
                ArcMode::SlidingFlow(id) | ArcMode::EscapingSlide(id) => {
                    let Ok(ci) = psvf.circle_index_by_id(id) else {
                        return fail(format!("arc {ai}: unknown circle id {id}"), ai, checked_samples);
                    };
                    let snapped = psvf.circle(ci).snap(mid.as_vec());
                    match crate::classify::sliding_field_vec(psvf, ci, snapped.as_vec()) {
                        Ok(v) => v,
                        Err(e) => {
                            return fail(
                                format!("arc {ai}: sliding field failed at midpoint: {e}"),
                                ai,
                                checked_samples,
                            )
                        }
                    }
                }
            };
            let residual = ((p1.as_vec() - p0.as_vec()) * (1.0 / dt) - v).norm();
            if residual > 1e-6 {
                return fail(
                    format!("arc {ai}: midpoint residual {residual:.3e} at t = {t0}"),
                    ai,
                    checked_samples,
                );
            }
        }
        // sliding samples must classify in their mode away from the endpoints
        if let ArcMode::SlidingFlow(id) | ArcMode::EscapingSlide(id) = arc.mode {
            let want = match arc.mode {
                ArcMode::SlidingFlow(_) => crate::classify::RegionClass::Sliding,
                _ => crate::classify::RegionClass::Escaping,
            };
            let Ok(ci) = psvf.circle_index_by_id(id) else {
                return fail(format!("arc {ai}: unknown circle id {id}"), ai, checked_samples);
            };
            for &(t, p) in &arc.samples {
                if t - arc.t_start < 1e-6 || arc.t_end - t < 1e-6 {
                    continue;
                }
                let g = psvf.gamma(ci, p.as_vec()).abs();
                if g > 1e-8 {
                    return fail(
                        format!("arc {ai}: sliding sample off the circle (|gamma| = {g:.3e})"),
                        ai,
                        checked_samples,
                    );
                }
                match crate::classify::classify_sigma_point(psvf, ci, p) {
                    Ok(c) if c == want => {}
                    Ok(c) => {
                        return fail(
                            format!("arc {ai}: sample at t = {t} classifies as {c:?}, wanted {want:?}"),
                            ai,
                            checked_samples,
                        )
                    }
                    Err(e) => {
                        return fail(
                            format!("arc {ai}: classification failed at t = {t}: {e}"),
                            ai,
                            checked_samples,
                        )
                    }
                }
            }
        }
        prev_end = Some((arc.t_end, arc.end_point()));
    }
    ValidationReport {
        pass: true,
        checked_arcs: orbit.arcs.len(),
        checked_samples,
        first_violation: None,
    }
}

/// CSV rendering of an orbit: `t,x,y,z,mode,region_or_circle,arc_index`.
pub fn orbit_to_csv(orbit: &FilippovOrbit) -> String {
    let mut out = String::from("t,x,y,z,mode,region_or_circle,arc_index\n");
    for (ai, arc) in orbit.arcs.iter().enumerate() {
        let (mode, ident) = match arc.mode {
            ArcMode::RegionFlow(r) => ("region", r as u32 + 1),
            ArcMode::SlidingFlow(id) => ("sliding", id),
            ArcMode::EscapingSlide(id) => ("escaping", id),
        };
        for &(t, p) in &arc.samples {
            let [x, y, z] = p.to_array();
            out.push_str(&format!("{t:.12},{x:.12},{y:.12},{z:.12},{mode},{ident},{ai}\n"));
        }
    }
    out
}

/// JSON sidecar with the branch log and arc summaries.
#[derive(Debug, Serialize)]
pub struct OrbitSidecar<'o> {
    pub start: SpherePoint,
    pub branch_log: &'o [BranchRecord],
    pub arcs: Vec<ArcSummary>,
}

#[derive(Debug, Serialize)]
pub struct ArcSummary {
    pub mode: ArcMode,
    pub t_start: f64,
    pub t_end: f64,
    pub terminal: TerminalEvent,
}

pub fn orbit_sidecar(orbit: &FilippovOrbit) -> OrbitSidecar<'_> {
    OrbitSidecar {
        start: orbit.start,
        branch_log: &orbit.branch_log,
        arcs: orbit
            .arcs
            .iter()
            .map(|a| ArcSummary {
                mode: a.mode,
                t_start: a.t_start,
                t_end: a.t_end,
                terminal: a.terminal.clone(),
            })
            .collect(),
    }
}

/// Integrate a single smooth field over the whole sphere, ignoring the
/// switching circles. Used by closed-form flow comparisons.
pub fn flow_field(
    field: &Field,
    p: SpherePoint,
    horizon: f64,
    sample_dt: f64,
) -> Result<Vec<(f64, SpherePoint)>> {
    let opts = EngineOpts::default();
    let f = |_t: f64, y: &[f64; 3]| {
        let v = field.eval(crate::sphere::Vec3::new(y[0], y[1], y[2]));
        [v.x, v.y, v.z]
    };
    let mut stepper = rk::Stepper::new(f, 0.0, [p.as_vec().x, p.as_vec().y, p.as_vec().z], opts.rtol, opts.atol);
    let mut samples = vec![(0.0, p)];
    let mut next_t = sample_dt;
    while stepper.t < horizon {
        stepper.step(horizon)?;
        while next_t <= stepper.t + 1e-15 && next_t <= horizon {
            let y = stepper.dense(next_t);
            samples.push((next_t, project_to_sphere(crate::sphere::Vec3::new(y[0], y[1], y[2]))?));
            next_t += sample_dt;
        }
        let y = stepper.y;
        let renorm = project_to_sphere(crate::sphere::Vec3::new(y[0], y[1], y[2]))?;
        stepper.reset_state(stepper.t, [renorm.as_vec().x, renorm.as_vec().y, renorm.as_vec().z]);
    }
    if let Some(last) = samples.last() {
        if (last.0 - horizon).abs() > 1e-12 {
            let y = stepper.y;
            samples.push((horizon, project_to_sphere(crate::sphere::Vec3::new(y[0], y[1], y[2]))?));
        }
    }
    Ok(samples)
}
