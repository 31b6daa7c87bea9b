//! Orbit state machine: applies the Filippov concatenation rules, consults a
//! branch handler wherever the forward continuation is not unique, and builds
//! the arc list plus decision log.

use super::drivers::{
    flow_region_driver, slide_driver, ArcRaw, FlowOutcome, SlideOutcome, SlideStop,
};
use super::{
    ArcMode, BranchPolicy, BranchRecord, Decision, Engine, EscapingRule, FilippovOrbit, OrbitArc,
    Side, SlideMode, TerminalEvent, EQUILIBRIUM_TOL,
};
use crate::classify::{
    classify_components, normal_components, sliding_speed, RegionClass, TangencyInfo,
};
use crate::error::{Error, Result};
use crate::sphere::SpherePoint;

/// Machine location between arcs.
#[derive(Debug, Clone)]
pub(crate) enum State {
    Region {
        region: usize,
        p: SpherePoint,
    },
    OnCircle {
        circle_idx: usize,
        p: SpherePoint,
        came_from: Option<usize>,
    },
    Slide {
        circle_idx: usize,
        phi: f64,
        mode: SlideMode,
        stop: SlideStop,
    },
    AtTangency {
        circle_idx: usize,
        info: TangencyInfo,
        arrival: Arrival,
    },
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Arrival {
    Graze { from_region: usize },
    SlideEnd,
    Start,
}

/// Kinds of points where the forward continuation is not unique.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EncounterKind {
    /// Interior escaping point.
    Interior,
    /// Region flow grazed the entry tangency of an escaping segment.
    GrazeEntry { from_region: usize },
    /// Sliding arrived at a tangency with a unique visible exit while the
    /// extended field continues into an escaping segment.
    SlideExitWithEscape { exit_side: Side },
    /// The extended field carries the orbit into an escaping segment and no
    /// visible exit exists at the tangency.
    IntoEscape,
}

/// Escaping-encounter data handed to a branch handler.
#[derive(Debug, Clone)]
pub(crate) struct Encounter {
    pub t: f64,
    /// Encounters seen along this orbit so far (this one included).
    pub ordinal: u32,
    /// Number of log records emitted before this decision.
    pub log_len: usize,
    pub circle_idx: usize,
    pub phi: f64,
    pub kind: EncounterKind,
    /// State to resume from when sampling an alternative continuation.
    pub resume: State,
    /// Angular extent of the escaping segment ahead, when known.
    pub segment: Option<SegmentAhead>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SegmentAhead {
    pub mode: SlideMode,
    /// Direction of the extended field along the circle: +1 or -1 in phi.
    pub dir: f64,
    /// Angle from the encounter point to the segment's far boundary.
    pub delta: f64,
}

/// A handler's resolution of an encounter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Choice {
    EnterSlide,
    ExitNow(Side),
    GrazeContinue,
    UniqueExit,
    DwellExitPhi { fraction: f64, side: Side },
    ScheduledExit { dwell: f64, side: Side },
}

pub(crate) trait EncounterHandler {
    fn choose(&mut self, enc: &Encounter) -> Result<Choice>;
}

/// The continuation the stay-on-manifold default takes at each encounter.
pub(crate) fn default_choice(kind: EncounterKind) -> Choice {
    match kind {
        EncounterKind::SlideExitWithEscape { .. } => Choice::UniqueExit,
        _ => Choice::EnterSlide,
    }
}

/// A queued alternative continuation of an encounter.
#[derive(Debug, Clone)]
pub(crate) struct ChildSpec {
    pub t: f64,
    pub resume: State,
    pub choice: Choice,
    pub ordinal: u32,
}

/// Handler implementing a `BranchPolicy`.
pub(crate) struct PolicyHandler<'p> {
    rule: &'p EscapingRule,
    schedule_pos: usize,
}

impl<'p> PolicyHandler<'p> {
    pub fn new(policy: &'p BranchPolicy) -> Self {
        PolicyHandler {
            rule: &policy.escaping,
            schedule_pos: 0,
        }
    }
}

impl EncounterHandler for PolicyHandler<'_> {
    fn choose(&mut self, enc: &Encounter) -> Result<Choice> {
        if let EscapingRule::Replay(decisions) = self.rule {
            let rec = decisions
                .get(enc.log_len)
                .ok_or(Error::PolicyExhausted)?;
            return decision_to_choice(rec);
        }
        if let EncounterKind::SlideExitWithEscape { .. } = enc.kind {
            // the visible-field exit is the deterministic continuation
            return Ok(Choice::UniqueExit);
        }
        match self.rule {
            EscapingRule::StaySliding => Ok(Choice::EnterSlide),
            EscapingRule::ExitNow(side) => Ok(Choice::ExitNow(*side)),
            EscapingRule::Scheduled(entries) => {
                let e = entries.get(self.schedule_pos).ok_or(Error::PolicyExhausted)?;
                self.schedule_pos += 1;
                Ok(Choice::ScheduledExit { dwell: e.0, side: e.1 })
            }
            EscapingRule::Replay(_) => unreachable!(),
        }
    }
}

fn decision_to_choice(d: &Decision) -> Result<Choice> {
    Ok(match d {
        Decision::StaySliding | Decision::PassThroughTangency => Choice::EnterSlide,
        Decision::ExitNow(s) => Choice::ExitNow(*s),
        Decision::DwellExit { fraction, side } => Choice::DwellExitPhi {
            fraction: *fraction,
            side: *side,
        },
        Decision::ScheduledExit { dwell, side } => Choice::ScheduledExit {
            dwell: *dwell,
            side: *side,
        },
        Decision::GrazeContinue => Choice::GrazeContinue,
        Decision::UniqueExit(_) => Choice::UniqueExit,
        Decision::HaltAtTangency => {
            return Err(Error::InvalidSystem(
                "replayed log halts at this decision point".into(),
            ))
        }
    })
}

/// Forces one choice at the first encounter, then stays on the manifold.
pub(crate) struct ForcedHandler {
    forced: Option<Choice>,
}

impl ForcedHandler {
    pub fn new(choice: Choice) -> Self {
        ForcedHandler { forced: Some(choice) }
    }
}

impl EncounterHandler for ForcedHandler {
    fn choose(&mut self, enc: &Encounter) -> Result<Choice> {
        if let Some(c) = self.forced.take() {
            return Ok(c);
        }
        if let EncounterKind::SlideExitWithEscape { .. } = enc.kind {
            return Ok(Choice::UniqueExit);
        }
        Ok(Choice::EnterSlide)
    }
}

const MAX_ARCS: usize = 200_000;

pub(crate) struct Machine<'e, 'a> {
    eng: &'e Engine<'a>,
    start: SpherePoint,
    t_end: f64,
    t: f64,
    arcs: Vec<OrbitArc>,
    log: Vec<BranchRecord>,
    ordinal: u32,
}

impl<'e, 'a> Machine<'e, 'a> {
    pub fn new(eng: &'e Engine<'a>, start: SpherePoint, t0: f64, horizon: f64) -> Self {
        Machine {
            eng,
            start,
            t_end: t0 + horizon,
            t: t0,
            arcs: Vec::new(),
            log: Vec::new(),
            ordinal: 0,
        }
    }

    pub fn with_context(mut self, ordinal: u32, log: Vec<BranchRecord>) -> Self {
        self.ordinal = ordinal;
        self.log = log;
        self
    }

    pub fn with_ordinal(mut self, ordinal: u32) -> Self {
        self.ordinal = ordinal;
        self
    }

    fn push_arc(&mut self, mode: ArcMode, raw: ArcRaw, terminal: TerminalEvent) {
        self.t = raw.t_end;
        self.arcs.push(OrbitArc {
            mode,
            t_start: raw.t_start,
            t_end: raw.t_end,
            samples: raw.samples,
            terminal,
        });
    }

    fn record(&mut self, decision: Decision) {
        self.log.push(BranchRecord { t: self.t, decision });
    }

    /// Run the machine from `state` to the horizon.
    pub fn run(
        mut self,
        state: State,
        handler: &mut dyn EncounterHandler,
    ) -> Result<FilippovOrbit> {
        let mut current = Some(state);
        loop {
            if self.arcs.len() > MAX_ARCS {
                return Err(Error::InvalidSystem("orbit arc count overflow".into()));
            }
            let Some(s) = current.take() else { break };
            if self.t >= self.t_end - 1e-14 {
                break;
            }
            current = self.step(s, handler)?;
        }
        Ok(FilippovOrbit {
            start: self.start,
            arcs: self.arcs,
            branch_log: self.log,
        })
    }

    fn step(
        &mut self,
        state: State,
        handler: &mut dyn EncounterHandler,
    ) -> Result<Option<State>> {
        match state {
            State::Region { region, p } => self.step_region(region, p),
            State::OnCircle {
                circle_idx,
                p,
                came_from,
            } => self.step_on_circle(circle_idx, p, came_from, handler),
            State::Slide {
                circle_idx,
                phi,
                mode,
                stop,
            } => self.step_slide(circle_idx, phi, mode, stop),
            State::AtTangency {
                circle_idx,
                info,
                arrival,
            } => self.step_tangency(circle_idx, info, arrival, handler),
        }
    }

    fn step_region(&mut self, region: usize, p: SpherePoint) -> Result<Option<State>> {
        let psvf = self.eng.psvf();
        if psvf.field_of(region).eval(p.as_vec()).norm() < EQUILIBRIUM_TOL {
            // stationary: no arc to record
            return Ok(None);
        }
        let (raw, outcome) =
            flow_region_driver(self.eng, region, p, self.t, self.t_end - self.t)?;
        match outcome {
            FlowOutcome::Hit { circle_idx, p } => {
                let id = psvf.circle(circle_idx).id;
                self.push_arc(ArcMode::RegionFlow(region), raw, TerminalEvent::HitCircle(id));
                Ok(Some(State::OnCircle {
                    circle_idx,
                    p,
                    came_from: Some(region),
                }))
            }
            FlowOutcome::Graze { circle_idx, p } => {
                match self.eng.tangency_at(circle_idx, p) {
                    Ok(info) => {
                        self.push_arc(
                            ArcMode::RegionFlow(region),
                            raw,
                            TerminalEvent::ReachedTangency(info),
                        );
                        Ok(Some(State::AtTangency {
                            circle_idx,
                            info,
                            arrival: Arrival::Graze { from_region: region },
                        }))
                    }
                    Err(_) => {
                        // unresolvable contact: halt if a field dies here
                        self.push_arc(
                            ArcMode::RegionFlow(region),
                            raw,
                            TerminalEvent::PseudoEquilibrium,
                        );
                        Ok(None)
                    }
                }
            }
            FlowOutcome::Horizon => {
                self.push_arc(ArcMode::RegionFlow(region), raw, TerminalEvent::HorizonReached);
                Ok(None)
            }
            FlowOutcome::Equilibrium => {
                self.push_arc(ArcMode::RegionFlow(region), raw, TerminalEvent::PseudoEquilibrium);
                Ok(None)
            }
        }
    }

    fn step_on_circle(
        &mut self,
        circle_idx: usize,
        p: SpherePoint,
        came_from: Option<usize>,
        handler: &mut dyn EncounterHandler,
    ) -> Result<Option<State>> {
        let psvf = self.eng.psvf();
        let (a, b) = normal_components(psvf, circle_idx, p.as_vec())?;
        match classify_components(a, b) {
            RegionClass::Crossing => {
                let target_side = match came_from {
                    Some(r) => {
                        let above = psvf.side_region(circle_idx, p.as_vec(), 1)?;
                        if above == r {
                            -1
                        } else {
                            1
                        }
                    }
                    // both components share the flow direction through the circle
                    None => {
                        if a > 0.0 {
                            1
                        } else {
                            -1
                        }
                    }
                };
                let region = psvf.side_region(circle_idx, p.as_vec(), target_side)?;
                Ok(Some(State::Region { region, p }))
            }
            RegionClass::Sliding => Ok(Some(State::Slide {
                circle_idx,
                phi: psvf.circle(circle_idx).phi_of(p.as_vec()),
                mode: SlideMode::Sliding,
                stop: SlideStop::None,
            })),
            RegionClass::Escaping => {
                let phi = psvf.circle(circle_idx).phi_of(p.as_vec());
                let segment = self.segment_ahead(circle_idx, phi)?;
                let enc = Encounter {
                    t: self.t,
                    ordinal: self.next_ordinal(),
                    log_len: self.log.len(),
                    circle_idx,
                    phi,
                    kind: EncounterKind::Interior,
                    resume: State::OnCircle {
                        circle_idx,
                        p,
                        came_from,
                    },
                    segment,
                };
                let choice = handler.choose(&enc)?;
                self.apply_choice(choice, &enc, p)
            }
            RegionClass::Tangency(_) => {
                let info = self.eng.tangency_at(circle_idx, p).or_else(|e| {
                    // a dead field at the contact point means a halt, not an error
                    let (fa, fb) = psvf.fields_at(circle_idx, p.as_vec())?;
                    if fa.eval(p.as_vec()).norm() < EQUILIBRIUM_TOL
                        || fb.eval(p.as_vec()).norm() < EQUILIBRIUM_TOL
                    {
                        Err(Error::ContactOrderUnresolved)
                    } else {
                        Err(e)
                    }
                });
                match info {
                    Ok(info) => Ok(Some(State::AtTangency {
                        circle_idx,
                        info,
                        arrival: match came_from {
                            Some(r) => Arrival::Graze { from_region: r },
                            None => Arrival::Start,
                        },
                    })),
                    Err(_) => {
                        self.record(Decision::HaltAtTangency);
                        Ok(None)
                    }
                }
            }
        }
    }

    fn step_slide(
        &mut self,
        circle_idx: usize,
        phi: f64,
        mode: SlideMode,
        stop: SlideStop,
    ) -> Result<Option<State>> {
        let psvf = self.eng.psvf();
        let id = psvf.circle(circle_idx).id;
        let arc_mode = match mode {
            SlideMode::Sliding => ArcMode::SlidingFlow(id),
            SlideMode::Escaping => ArcMode::EscapingSlide(id),
        };
        let (raw, outcome) =
            slide_driver(self.eng, circle_idx, phi, self.t, self.t_end - self.t, stop)?;
        match outcome {
            SlideOutcome::Boundary { p } => match self.eng.tangency_at(circle_idx, p) {
                Ok(info) => {
                    self.push_arc(arc_mode, raw, TerminalEvent::ReachedTangency(info));
                    Ok(Some(State::AtTangency {
                        circle_idx,
                        info,
                        arrival: Arrival::SlideEnd,
                    }))
                }
                Err(_) => {
                    self.push_arc(arc_mode, raw, TerminalEvent::PseudoEquilibrium);
                    Ok(None)
                }
            },
            SlideOutcome::PseudoEquilibrium => {
                self.push_arc(arc_mode, raw, TerminalEvent::PseudoEquilibrium);
                Ok(None)
            }
            SlideOutcome::Horizon => {
                self.push_arc(arc_mode, raw, TerminalEvent::HorizonReached);
                Ok(None)
            }
            SlideOutcome::Exit { p, side } => {
                self.push_arc(arc_mode, raw, TerminalEvent::ExitBranch(side));
                let region = psvf.side_region(circle_idx, p.as_vec(), side.sign())?;
                Ok(Some(State::Region { region, p }))
            }
        }
    }

    fn step_tangency(
        &mut self,
        circle_idx: usize,
        info: TangencyInfo,
        arrival: Arrival,
        handler: &mut dyn EncounterHandler,
    ) -> Result<Option<State>> {
        let psvf = self.eng.psvf();
        let p = info.point;
        let segment = self.segment_ahead(circle_idx, info.phi)?;
        let exits = self.viable_exits(circle_idx, &info)?;

        if let Arrival::Start = arrival {
            let (fa, fb) = psvf.fields_at(circle_idx, p.as_vec())?;
            if fa.eval(p.as_vec()).norm() < EQUILIBRIUM_TOL
                || fb.eval(p.as_vec()).norm() < EQUILIBRIUM_TOL
            {
                return Ok(None); // starting at a real equilibrium on the circle
            }
        }

        let escape_ahead = matches!(
            segment,
            Some(SegmentAhead { mode: SlideMode::Escaping, .. })
        );

        match arrival {
            Arrival::Graze { from_region } => {
                if escape_ahead {
                    let enc = Encounter {
                        t: self.t,
                        ordinal: self.next_ordinal(),
                        log_len: self.log.len(),
                        circle_idx,
                        phi: info.phi,
                        kind: EncounterKind::GrazeEntry { from_region },
                        resume: State::AtTangency {
                            circle_idx,
                            info,
                            arrival,
                        },
                        segment,
                    };
                    let choice = handler.choose(&enc)?;
                    self.apply_choice(choice, &enc, p)
                } else {
                    // graze and continue in the same region
                    Ok(Some(State::Region { region: from_region, p }))
                }
            }
            Arrival::SlideEnd | Arrival::Start => match exits.len() {
                1 => {
                    let side = exits[0];
                    if escape_ahead {
                        let enc = Encounter {
                            t: self.t,
                            ordinal: self.next_ordinal(),
                            log_len: self.log.len(),
                            circle_idx,
                            phi: info.phi,
                            kind: EncounterKind::SlideExitWithEscape { exit_side: side },
                            resume: State::AtTangency {
                                circle_idx,
                                info,
                                arrival,
                            },
                            segment,
                        };
                        let choice = handler.choose(&enc)?;
                        self.apply_choice(choice, &enc, p)
                    } else {
                        self.record(Decision::UniqueExit(side));
                        let region = psvf.side_region(circle_idx, p.as_vec(), side.sign())?;
                        Ok(Some(State::Region { region, p }))
                    }
                }
                0 => match segment {
                    Some(SegmentAhead { mode: SlideMode::Sliding, .. }) => {
                        self.record(Decision::PassThroughTangency);
                        Ok(Some(State::Slide {
                            circle_idx,
                            phi: info.phi,
                            mode: SlideMode::Sliding,
                            stop: SlideStop::None,
                        }))
                    }
                    Some(SegmentAhead { mode: SlideMode::Escaping, .. }) => {
                        let enc = Encounter {
                            t: self.t,
                            ordinal: self.next_ordinal(),
                            log_len: self.log.len(),
                            circle_idx,
                            phi: info.phi,
                            kind: EncounterKind::IntoEscape,
                            resume: State::AtTangency {
                                circle_idx,
                                info,
                                arrival,
                            },
                            segment,
                        };
                        let choice = handler.choose(&enc)?;
                        self.apply_choice(choice, &enc, p)
                    }
                    None => {
                        self.record(Decision::HaltAtTangency);
                        Ok(None)
                    }
                },
                _ => {
                    // hyperbolic: two admissible exits, no deterministic rule
                    self.record(Decision::HaltAtTangency);
                    Ok(None)
                }
            },
        }
    }

    /// Sides whose tangent field arc exits into its own region at the point.
    fn viable_exits(&self, circle_idx: usize, info: &TangencyInfo) -> Result<Vec<Side>> {
        let psvf = self.eng.psvf();
        let p = info.point;
        let (fa, fb) = psvf.fields_at(circle_idx, p.as_vec())?;
        let mut out = Vec::new();
        if let Some(c) = info.above {
            if c.visibility == crate::classify::Visibility::Visible
                && fa.eval(p.as_vec()).norm() >= EQUILIBRIUM_TOL
            {
                out.push(Side::Above);
            }
        }
        if let Some(c) = info.below {
            if c.visibility == crate::classify::Visibility::Visible
                && fb.eval(p.as_vec()).norm() >= EQUILIBRIUM_TOL
            {
                out.push(Side::Below);
            }
        }
        Ok(out)
    }

    /// The circle segment the extended sliding field enters from `phi`.
    fn segment_ahead(&self, circle_idx: usize, phi: f64) -> Result<Option<SegmentAhead>> {
        let psvf = self.eng.psvf();
        let speed = match sliding_speed(psvf, circle_idx, phi) {
            Ok(s) => s,
            Err(_) => return Ok(None),
        };
        if speed.abs() < 1e-11 {
            return Ok(None);
        }
        let dir = speed.signum();
        let probe_phi = phi + dir * 1e-4;
        let q = psvf.circle(circle_idx).param(probe_phi);
        let (a, b) = normal_components(psvf, circle_idx, q.as_vec())?;
        let mode = match classify_components(a, b) {
            RegionClass::Sliding => SlideMode::Sliding,
            RegionClass::Escaping => SlideMode::Escaping,
            _ => return Ok(None),
        };
        let delta = self.segment_extent(circle_idx, phi, dir);
        Ok(Some(SegmentAhead { mode, dir, delta }))
    }

    /// Angle from `phi` in direction `dir` to the next catalogued tangency.
    fn segment_extent(&self, circle_idx: usize, phi: f64, dir: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        let Some(list) = self.eng.catalog(circle_idx) else {
            return tau;
        };
        let mut best = tau;
        for t in list {
            let mut d = (t.phi - phi) * dir;
            d = d.rem_euclid(tau);
            if d > 1e-6 && d < best {
                best = d;
            }
        }
        best
    }

    fn next_ordinal(&mut self) -> u32 {
        self.ordinal += 1;
        self.ordinal
    }

    /// Arc angle after which a dwell branch leaves the segment.
    ///
    /// The exit lands on the destination-side orbit whose latitude about the
    /// destination field's rotation axis is the `fraction` point between the
    /// segment endpoints' latitudes. Between consecutive tangencies of that
    /// field its orbit invariant is strictly monotone along the circle, so
    /// uniform fractions spread the exits uniformly in destination latitude;
    /// a plain fraction of the arc angle is the fallback when monotonicity is
    /// not available.
    fn dwell_dphi(
        &self,
        enc: &Encounter,
        seg: &SegmentAhead,
        side: Side,
        fraction: f64,
    ) -> Result<f64> {
        let psvf = self.eng.psvf();
        let circle = psvf.circle(enc.circle_idx);
        let p0 = circle.param(enc.phi);
        let fallback = (fraction * seg.delta).clamp(1e-4, seg.delta - 1e-4);
        let Ok(region) = psvf.side_region(enc.circle_idx, p0.as_vec(), side.sign()) else {
            return Ok(fallback);
        };
        let Ok(axis) = psvf.field_of(region).base().axis().normalize() else {
            return Ok(fallback);
        };
        let lat = |dphi: f64| {
            let p = circle.param(enc.phi + seg.dir * dphi);
            axis.dot(p.as_vec()).clamp(-1.0, 1.0).acos()
        };
        let margin = (seg.delta * 1e-3).min(1e-4);
        let (lo, hi) = (margin, seg.delta - margin);
        let (l_lo, l_hi) = (lat(lo), lat(hi));
        let l_mid = lat(0.5 * (lo + hi));
        let monotone = (l_lo < l_mid && l_mid < l_hi) || (l_lo > l_mid && l_mid > l_hi);
        if !monotone || (l_hi - l_lo).abs() < 1e-9 {
            return Ok(fallback);
        }
        let target = l_lo + fraction * (l_hi - l_lo);
        let (mut a, mut b) = (lo, hi);
        let increasing = l_hi > l_lo;
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if (lat(m) > target) == increasing {
                b = m;
            } else {
                a = m;
            }
        }
        Ok(0.5 * (a + b))
    }

    fn apply_choice(
        &mut self,
        choice: Choice,
        enc: &Encounter,
        p: SpherePoint,
    ) -> Result<Option<State>> {
        let psvf = self.eng.psvf();
        let circle_idx = enc.circle_idx;
        match choice {
            Choice::EnterSlide => {
                let Some(seg) = enc.segment else {
                    self.record(Decision::HaltAtTangency);
                    return Ok(None);
                };
                self.record(Decision::StaySliding);
                Ok(Some(State::Slide {
                    circle_idx,
                    phi: enc.phi,
                    mode: seg.mode,
                    stop: SlideStop::None,
                }))
            }
            Choice::ExitNow(side) => {
                if self.exit_now_valid(enc, side)? {
                    self.record(Decision::ExitNow(side));
                    let region = psvf.side_region(circle_idx, p.as_vec(), side.sign())?;
                    Ok(Some(State::Region { region, p }))
                } else {
                    // fall back to the nearest admissible continuation
                    match enc.kind {
                        EncounterKind::GrazeEntry { from_region } => {
                            self.record(Decision::GrazeContinue);
                            Ok(Some(State::Region { region: from_region, p }))
                        }
                        _ => self.apply_choice(Choice::EnterSlide, enc, p),
                    }
                }
            }
            Choice::GrazeContinue => match enc.kind {
                EncounterKind::GrazeEntry { from_region } => {
                    self.record(Decision::GrazeContinue);
                    Ok(Some(State::Region { region: from_region, p }))
                }
                _ => self.apply_choice(Choice::EnterSlide, enc, p),
            },
            Choice::UniqueExit => match enc.kind {
                EncounterKind::SlideExitWithEscape { exit_side } => {
                    self.record(Decision::UniqueExit(exit_side));
                    let region = psvf.side_region(circle_idx, p.as_vec(), exit_side.sign())?;
                    Ok(Some(State::Region { region, p }))
                }
                _ => self.apply_choice(Choice::EnterSlide, enc, p),
            },
            Choice::DwellExitPhi { fraction, side } => {
                let Some(seg) = enc.segment else {
                    self.record(Decision::HaltAtTangency);
                    return Ok(None);
                };
                self.record(Decision::DwellExit { fraction, side });
                let dphi = self.dwell_dphi(enc, &seg, side, fraction)?;
                Ok(Some(State::Slide {
                    circle_idx,
                    phi: enc.phi,
                    mode: seg.mode,
                    stop: SlideStop::AtDeltaPhi { dphi, side },
                }))
            }
            Choice::ScheduledExit { dwell, side } => {
                let Some(seg) = enc.segment else {
                    self.record(Decision::HaltAtTangency);
                    return Ok(None);
                };
                self.record(Decision::ScheduledExit { dwell, side });
                Ok(Some(State::Slide {
                    circle_idx,
                    phi: enc.phi,
                    mode: seg.mode,
                    stop: SlideStop::AfterDwell { dwell, side },
                }))
            }
        }
    }

    /// An immediate exit needs the side's field to carry the orbit into that
    /// side's region: transversal pointing away from the circle, or a visible
    /// tangent contact.
    fn exit_now_valid(&self, enc: &Encounter, side: Side) -> Result<bool> {
        let psvf = self.eng.psvf();
        let p = match &enc.resume {
            State::OnCircle { p, .. } => *p,
            State::AtTangency { info, .. } => info.point,
            State::Region { p, .. } => *p,
            State::Slide { circle_idx, phi, .. } => psvf.circle(*circle_idx).param(*phi),
        };
        let (a, b) = normal_components(psvf, enc.circle_idx, p.as_vec())?;
        let comp = match side {
            Side::Above => a,
            Side::Below => b,
        };
        if comp.abs() > crate::classify::TANGENCY_TOL {
            // transversal: must point away from the circle into the side
            return Ok(comp * side.sign() as f64 > 0.0);
        }
        // tangent: need a visible contact with a living field
        let info = self.eng.tangency_at(enc.circle_idx, p)?;
        let contact = match side {
            Side::Above => info.above,
            Side::Below => info.below,
        };
        let (fa, fb) = psvf.fields_at(enc.circle_idx, p.as_vec())?;
        let f = match side {
            Side::Above => fa,
            Side::Below => fb,
        };
        Ok(matches!(
            contact,
            Some(c) if c.visibility == crate::classify::Visibility::Visible
        ) && f.eval(p.as_vec()).norm() >= EQUILIBRIUM_TOL)
    }
}

/// Initial machine state for a start point, or None when the orbit halts
/// immediately (start at an equilibrium).
pub(crate) fn start_state(eng: &Engine, p: SpherePoint) -> Result<Option<State>> {
    let psvf = eng.psvf();
    for (ci, c) in psvf.circles().iter().enumerate() {
        if c.gamma(p.as_vec()).abs() <= crate::classify::OFF_CIRCLE_TOL {
            let (fa, fb) = psvf.fields_at(ci, p.as_vec())?;
            if fa.eval(p.as_vec()).norm() < EQUILIBRIUM_TOL
                || fb.eval(p.as_vec()).norm() < EQUILIBRIUM_TOL
            {
                return Ok(None);
            }
            return Ok(Some(State::OnCircle {
                circle_idx: ci,
                p: c.snap(p.as_vec()),
                came_from: None,
            }));
        }
    }
    let region = psvf.region_of(p)?;
    if psvf.field_of(region).eval(p.as_vec()).norm() < EQUILIBRIUM_TOL {
        return Ok(None);
    }
    Ok(Some(State::Region { region, p }))
}

/// Full orbit integration under a branch policy.
pub(crate) fn integrate(
    eng: &Engine,
    p: SpherePoint,
    horizon: f64,
    policy: &BranchPolicy,
) -> Result<FilippovOrbit> {
    let empty = FilippovOrbit {
        start: p,
        arcs: Vec::new(),
        branch_log: Vec::new(),
    };
    if horizon <= 0.0 {
        return Ok(empty);
    }
    let Some(state) = start_state(eng, p)? else {
        return Ok(empty);
    };
    let mut handler = PolicyHandler::new(policy);
    Machine::new(eng, p, 0.0, horizon).run(state, &mut handler)
}

/// Single region-flow arc (operation form).
pub(crate) fn flow_region_arc(
    eng: &Engine,
    region: usize,
    p: SpherePoint,
    horizon: f64,
) -> Result<OrbitArc> {
    let psvf = eng.psvf();
    if horizon <= 0.0 {
        return Err(Error::InvalidConfig("horizon must be positive".into()));
    }
    if !psvf.point_in_region_closure(p.as_vec(), region) {
        return Err(Error::InvalidSystem(format!(
            "start point is not in the closure of region {region}"
        )));
    }
    if psvf.field_of(region).eval(p.as_vec()).norm() < EQUILIBRIUM_TOL {
        return Err(Error::InvalidSystem(
            "start point is an equilibrium of the region field".into(),
        ));
    }
    let (raw, outcome) = flow_region_driver(eng, region, p, 0.0, horizon)?;
    let terminal = match outcome {
        FlowOutcome::Hit { circle_idx, .. } => {
            TerminalEvent::HitCircle(psvf.circle(circle_idx).id)
        }
        FlowOutcome::Graze { circle_idx, p } => match eng.tangency_at(circle_idx, p) {
            Ok(info) => TerminalEvent::ReachedTangency(info),
            Err(_) => TerminalEvent::PseudoEquilibrium,
        },
        FlowOutcome::Horizon => TerminalEvent::HorizonReached,
        FlowOutcome::Equilibrium => TerminalEvent::PseudoEquilibrium,
    };
    Ok(OrbitArc {
        mode: ArcMode::RegionFlow(region),
        t_start: raw.t_start,
        t_end: raw.t_end,
        samples: raw.samples,
        terminal,
    })
}

/// Single slide arc (operation form), mode checked against the start point.
pub(crate) fn slide_arc(
    eng: &Engine,
    circle_idx: usize,
    p: SpherePoint,
    horizon: f64,
    mode: SlideMode,
) -> Result<OrbitArc> {
    let psvf = eng.psvf();
    if horizon <= 0.0 {
        return Err(Error::InvalidConfig("horizon must be positive".into()));
    }
    let class = crate::classify::classify_sigma_point(psvf, circle_idx, p)?;
    let want = match mode {
        SlideMode::Sliding => RegionClass::Sliding,
        SlideMode::Escaping => RegionClass::Escaping,
    };
    let phi = psvf.circle(circle_idx).phi_of(p.as_vec());
    if class != want {
        // allow starting from a boundary tangency of the segment
        let ok = matches!(class, RegionClass::Tangency(_))
            && match sliding_speed(psvf, circle_idx, phi) {
                Ok(s) if s.abs() > 1e-11 => {
                    let q = psvf.circle(circle_idx).param(phi + s.signum() * 1e-4);
                    crate::classify::classify_sigma_point(psvf, circle_idx, q)
                        .map(|c| c == want)
                        .unwrap_or(false)
                }
                _ => false,
            };
        if !ok {
            return Err(Error::WrongMode);
        }
    }
    let (raw, outcome) = slide_driver(eng, circle_idx, phi, 0.0, horizon, SlideStop::None)?;
    let terminal = match outcome {
        SlideOutcome::Boundary { p } => match eng.tangency_at(circle_idx, p) {
            Ok(info) => TerminalEvent::ReachedTangency(info),
            Err(_) => TerminalEvent::PseudoEquilibrium,
        },
        SlideOutcome::PseudoEquilibrium => TerminalEvent::PseudoEquilibrium,
        SlideOutcome::Horizon => TerminalEvent::HorizonReached,
        SlideOutcome::Exit { side, .. } => TerminalEvent::ExitBranch(side),
    };
    let id = psvf.circle(circle_idx).id;
    Ok(OrbitArc {
        mode: match mode {
            SlideMode::Sliding => ArcMode::SlidingFlow(id),
            SlideMode::Escaping => ArcMode::EscapingSlide(id),
        },
        t_start: raw.t_start,
        t_end: raw.t_end,
        samples: raw.samples,
        terminal,
    })
}

/// Van der Corput binary radical inverse.
fn vdc(mut k: u64) -> f64 {
    let mut r = 0.0;
    let mut f = 0.5;
    while k > 0 {
        if k & 1 == 1 {
            r += f;
        }
        f *= 0.5;
        k >>= 1;
    }
    r
}

const GOLDEN_FRAC: f64 = 0.618_033_988_749_894_9;

/// Dwell fraction for branch slot `j` at encounter `ordinal`: a nested binary
/// sequence rotated per encounter, so larger budgets refine rather than move
/// the sample set, and repeat encounters sweep new exit points.
pub(crate) fn dwell_fraction(ordinal: u32, j: usize) -> f64 {
    let raw = (vdc(j as u64 + 1) + ordinal as f64 * GOLDEN_FRAC).fract();
    raw.clamp(0.02, 0.98)
}

/// k-th point of the plain golden rotation, used by samplers that keep their
/// own per-family counters.
pub(crate) fn golden_point(k: u32) -> f64 {
    (0.5 + k as f64 * GOLDEN_FRAC).fract().clamp(0.02, 0.98)
}

/// Ordered continuation menu at a branch point.
pub(crate) fn branch_choices(kind: EncounterKind, budget: usize, ordinal: u32) -> Vec<Choice> {
    let mut out: Vec<Choice> = Vec::new();
    match kind {
        EncounterKind::Interior => {
            out.push(Choice::ExitNow(Side::Above));
            out.push(Choice::ExitNow(Side::Below));
            out.push(Choice::EnterSlide);
        }
        EncounterKind::GrazeEntry { .. } => {
            out.push(Choice::GrazeContinue);
            out.push(Choice::EnterSlide);
        }
        EncounterKind::SlideExitWithEscape { .. } => {
            out.push(Choice::UniqueExit);
            out.push(Choice::EnterSlide);
        }
        EncounterKind::IntoEscape => {
            out.push(Choice::EnterSlide);
        }
    }
    let mut j = 0;
    while out.len() < budget {
        let fraction = dwell_fraction(ordinal, j / 2);
        let side = if j % 2 == 0 { Side::Above } else { Side::Below };
        out.push(Choice::DwellExitPhi { fraction, side });
        j += 1;
    }
    out.truncate(budget);
    out
}

/// The branch point a prefix orbit ends at, if any.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub(crate) t: f64,
    pub(crate) kind: EncounterKind,
    pub(crate) resume: State,
    pub(crate) ordinal: u32,
}

pub(crate) fn branch_point_of(eng: &Engine, prefix: &FilippovOrbit) -> Result<BranchPoint> {
    let psvf = eng.psvf();
    let ordinal = prefix.branch_log.len() as u32;
    let not_branch = || Error::NotABranchPoint;

    let (t, state): (f64, State) = if let Some(last) = prefix.arcs.last() {
        match &last.terminal {
            TerminalEvent::ReachedTangency(info) => {
                let ci = psvf.circle_index_by_id(info.circle)?;
                let arrival = match last.mode {
                    ArcMode::RegionFlow(r) => Arrival::Graze { from_region: r },
                    _ => Arrival::SlideEnd,
                };
                (
                    last.t_end,
                    State::AtTangency {
                        circle_idx: ci,
                        info: *info,
                        arrival,
                    },
                )
            }
            _ => {
                let p = last.end_point();
                let ci = on_circle_index(psvf, p).ok_or_else(not_branch)?;
                (
                    last.t_end,
                    State::OnCircle {
                        circle_idx: ci,
                        p,
                        came_from: None,
                    },
                )
            }
        }
    } else {
        let p = prefix.start;
        let ci = on_circle_index(psvf, p).ok_or_else(not_branch)?;
        (
            0.0,
            State::OnCircle {
                circle_idx: ci,
                p,
                came_from: None,
            },
        )
    };

    // the state must present an escaping continuation or a non-unique tangency
    let kind = match &state {
        State::OnCircle { circle_idx, p, .. } => {
            let (a, b) = normal_components(psvf, *circle_idx, p.as_vec())?;
            match classify_components(a, b) {
                RegionClass::Escaping => EncounterKind::Interior,
                RegionClass::Tangency(_) => {
                    tangency_kind(eng, *circle_idx, p, Arrival::Start)?.ok_or_else(not_branch)?
                }
                _ => return Err(not_branch()),
            }
        }
        State::AtTangency {
            circle_idx,
            info,
            arrival,
        } => tangency_kind(eng, *circle_idx, &info.point, *arrival)?.ok_or_else(not_branch)?,
        _ => return Err(not_branch()),
    };
    Ok(BranchPoint {
        t,
        kind,
        resume: state,
        ordinal,
    })
}

fn on_circle_index(psvf: &crate::psvf::Psvf, p: SpherePoint) -> Option<usize> {
    psvf.circles()
        .iter()
        .position(|c| c.gamma(p.as_vec()).abs() <= crate::classify::OFF_CIRCLE_TOL)
}

fn tangency_kind(
    eng: &Engine,
    circle_idx: usize,
    p: &SpherePoint,
    arrival: Arrival,
) -> Result<Option<EncounterKind>> {
    let psvf = eng.psvf();
    let info = eng.tangency_at(circle_idx, *p)?;
    let speed = match sliding_speed(psvf, circle_idx, info.phi) {
        Ok(s) => s,
        Err(_) => return Ok(None),
    };
    if speed.abs() < 1e-11 {
        return Ok(None);
    }
    let q = psvf.circle(circle_idx).param(info.phi + speed.signum() * 1e-4);
    let (a, b) = normal_components(psvf, circle_idx, q.as_vec())?;
    if classify_components(a, b) != RegionClass::Escaping {
        return Ok(None);
    }
    let visible: Vec<Side> = info
        .visible_sides()
        .into_iter()
        .map(|s| if s > 0 { Side::Above } else { Side::Below })
        .collect();
    Ok(Some(match arrival {
        Arrival::Graze { from_region } => EncounterKind::GrazeEntry { from_region },
        _ => match visible.len() {
            1 => EncounterKind::SlideExitWithEscape { exit_side: visible[0] },
            _ => EncounterKind::IntoEscape,
        },
    }))
}

/// Enumerate up to `budget` continuations of `prefix`, each integrated for
/// `horizon` additional time units.
pub fn enumerate_branches_with(
    eng: &Engine,
    prefix: &FilippovOrbit,
    budget: usize,
    horizon: f64,
) -> Result<Vec<FilippovOrbit>> {
    let bp = branch_point_of(eng, prefix)?;
    let choices = branch_choices(bp.kind, budget, bp.ordinal);
    let mut out = Vec::with_capacity(choices.len());
    for choice in choices {
        let mut handler = ForcedHandler::new(choice);
        let machine = Machine::new(eng, prefix.start, bp.t, horizon)
            .with_context(bp.ordinal, prefix.branch_log.clone());
        let suffix = machine.run(bp.resume.clone(), &mut handler)?;
        let mut arcs = prefix.arcs.clone();
        arcs.extend(suffix.arcs);
        out.push(FilippovOrbit {
            start: prefix.start,
            arcs,
            branch_log: suffix.branch_log,
        });
    }
    Ok(out)
}
