//! Experiment layer: closed-form flow oracles, the finite transitivity probe,
//! parameter sweeps, sliding/escaping evidence, the two-zone linear check,
//! and the bump-perturbation experiment.

use crate::classify::{
    classify_components, find_tangencies, normal_components, pseudo_equilibria, sliding_speed,
    RegionClass, TangencyInfo,
};
use crate::error::{Error, Result};
use crate::orbit::machine_api::{
    branch_choices, default_choice, golden_point, start_state, ChildSpec, Choice, Encounter,
    EncounterHandler, ForcedHandler, Machine,
};
use crate::orbit::{Engine, EngineOpts, FilippovOrbit};
use crate::psvf::{apply_bump, make_z_theta, BumpPerturbation, Psvf, Region};
use crate::sphere::{project_to_sphere, Mat3, PlaneCircle, SpherePoint, Vec3};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::{PI, TAU};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

/// Hard cap on branch prefixes explored per probe run.
pub const PREFIX_LIMIT: usize = 1_000_000;

/// The two closed-form flows of the three-zone family at theta = pi/3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinFlow {
    /// Cap field (z, 0, -x): rotation about the y axis.
    X,
    /// Band field at theta = pi/3: rotation about (0, -1/2, sqrt(3)/2).
    Y,
}

/// Explicit flow of the builtin fields.
pub fn closed_form_flow(which: BuiltinFlow, t: f64, p: SpherePoint) -> SpherePoint {
    let [x, y, z] = p.to_array();
    let (s, c) = t.sin_cos();
    let v = match which {
        BuiltinFlow::X => Vec3::new(x * c + z * s, y, z * c - x * s),
        BuiltinFlow::Y => {
            let s3 = 3.0f64.sqrt();
            Vec3::new(
                x * c - 0.5 * (s3 * y + z) * s,
                0.25 * (y + 3.0 * y * c + s3 * (z * (c - 1.0) + 2.0 * x * s)),
                0.25 * (3.0 * z + s3 * y * (c - 1.0) + z * c + 2.0 * x * s),
            )
        }
    };
    project_to_sphere(v).expect("closed-form flow preserves the norm")
}

/// Probe configuration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProbeConfig {
    /// Number of Fibonacci-sphere nodes.
    pub nodes: usize,
    /// Geodesic radius of the target balls.
    pub epsilon: f64,
    /// Orbit horizon per start node.
    pub horizon: f64,
    /// Branch budget per escaping encounter.
    pub branch_budget: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            nodes: 200,
            epsilon: 0.25,
            horizon: 200.0,
            branch_budget: 4,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    fn validate(&self) -> Result<()> {
        if self.nodes < 12 {
            return Err(Error::InvalidConfig("need at least 12 net nodes".into()));
        }
        let spacing = (4.0 * PI / self.nodes as f64).sqrt();
        if self.epsilon <= spacing / 2.0 {
            return Err(Error::InvalidConfig(format!(
                "epsilon {} must exceed half the net spacing {:.4}",
                self.epsilon,
                spacing / 2.0
            )));
        }
        if self.horizon <= 0.0 || self.branch_budget == 0 {
            return Err(Error::InvalidConfig(
                "horizon and branch budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Probe verdict; `Fails` carries a truncated list of unreached ordered pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Verdict {
    TransitiveEvidence,
    Fails {
        unreached_pairs: usize,
        sample: Vec<(usize, usize)>,
    },
}

impl Verdict {
    pub fn is_transitive(&self) -> bool {
        matches!(self, Verdict::TransitiveEvidence)
    }
}

/// Result of a reachability probe.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub config: ProbeConfig,
    /// Net nodes; real region-field equilibria are appended at the end.
    pub nodes: Vec<[f64; 3]>,
    pub equilibrium_nodes: usize,
    /// reachability[u][v]: some sampled orbit point from u lies within
    /// epsilon of node v.
    #[serde(skip)]
    pub reachability: Vec<Vec<bool>>,
    pub verdict: Verdict,
    /// Witness orbits from the first start node.
    #[serde(skip)]
    pub witnesses: Vec<FilippovOrbit>,
}

impl ProbeReport {
    /// Adjacency-list rendering of the reachability relation.
    pub fn adjacency_lists(&self) -> String {
        let mut out = String::new();
        for (u, row) in self.reachability.iter().enumerate() {
            out.push_str(&format!("{u}:"));
            for (v, hit) in row.iter().enumerate() {
                if *hit {
                    out.push_str(&format!(" {v}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Fibonacci sphere net, rotated by a seeded random rotation.
pub fn fibonacci_net(n: usize, seed: u64) -> Vec<SpherePoint> {
    let golden_angle = PI * (3.0 - 5.0f64.sqrt());
    let rotation = seeded_rotation(seed);
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden_angle * i as f64;
            let p = Vec3::new(r * phi.cos(), r * phi.sin(), z);
            project_to_sphere(rotation.mul_vec(p)).expect("net point is unit")
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn seeded_rotation(seed: u64) -> Mat3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // axis from two uniforms, angle from a third
    let z = 2.0 * uniform(&mut rng) - 1.0;
    let phi = TAU * uniform(&mut rng);
    let r = (1.0 - z * z).sqrt();
    let axis = Vec3::new(r * phi.cos(), r * phi.sin(), z);
    let angle = TAU * uniform(&mut rng);
    Mat3::rotation(axis, angle)
}

/// Nodes bucketed by z-band for fast epsilon-ball membership tests.
struct NodeGrid {
    nodes: Vec<Vec3>,
    bands: Vec<Vec<usize>>,
    band_height: f64,
    cos_eps: f64,
}

impl NodeGrid {
    fn new(nodes: &[SpherePoint], epsilon: f64) -> Self {
        let band_height = epsilon.max(1e-3);
        let n_bands = (2.0 / band_height).ceil() as usize + 1;
        let mut bands = vec![Vec::new(); n_bands];
        for (i, p) in nodes.iter().enumerate() {
            let idx = (((p.as_vec().z + 1.0) / band_height) as usize).min(n_bands - 1);
            bands[idx].push(i);
        }
        NodeGrid {
            nodes: nodes.iter().map(|p| p.as_vec()).collect(),
            bands,
            band_height,
            cos_eps: epsilon.cos(),
        }
    }

    fn mark(&self, p: Vec3, covered: &mut [bool], remaining: &mut usize) {
        let idx = (((p.z + 1.0) / self.band_height) as isize).clamp(0, self.bands.len() as isize - 1);
        let lo = (idx - 1).max(0) as usize;
        let hi = (idx + 1).min(self.bands.len() as isize - 1) as usize;
        for band in &self.bands[lo..=hi] {
            for &ni in band {
                if !covered[ni] && self.nodes[ni].dot(p) >= self.cos_eps {
                    covered[ni] = true;
                    *remaining -= 1;
                }
            }
        }
    }
}

/// Handler that follows the stay-on-manifold default and queues every
/// alternative continuation of the budget menu for later integration.
///
/// Dwell fractions are re-drawn from a per-(circle, side) golden sequence, so
/// repeat encounters on the same circle sweep the whole exit family instead
/// of sharing one global rotation. Larger budgets and horizons only append to
/// each family; the spawned exit set grows monotonically.
struct SpawningHandler {
    budget: usize,
    children: Vec<ChildSpec>,
    family_counters: std::collections::HashMap<(usize, i8), u32>,
}

impl SpawningHandler {
    fn new(budget: usize) -> Self {
        SpawningHandler {
            budget,
            children: Vec::new(),
            family_counters: std::collections::HashMap::new(),
        }
    }
}

impl EncounterHandler for SpawningHandler {
    fn choose(&mut self, enc: &Encounter) -> Result<Choice> {
        let default = default_choice(enc.kind);
        for choice in branch_choices(enc.kind, self.budget, enc.ordinal) {
            if choice == default {
                continue;
            }
            let adjusted = match choice {
                Choice::DwellExitPhi { side, .. } => {
                    let k = self
                        .family_counters
                        .entry((enc.circle_idx, side.sign()))
                        .or_insert(0);
                    let fraction = golden_point(*k);
                    *k += 1;
                    Choice::DwellExitPhi { fraction, side }
                }
                other => other,
            };
            self.children.push(ChildSpec {
                t: enc.t,
                resume: enc.resume.clone(),
                choice: adjusted,
                ordinal: enc.ordinal,
            });
        }
        Ok(default)
    }
}

/// Grow the reachable node set from one start point.
fn reach_row(
    eng: &Engine,
    start: SpherePoint,
    grid: &NodeGrid,
    cfg: &ProbeConfig,
    prefix_counter: &AtomicUsize,
    overflow: &AtomicBool,
    keep_witnesses: bool,
) -> Result<(Vec<bool>, Vec<FilippovOrbit>)> {
    let mut covered = vec![false; grid.nodes.len()];
    let mut remaining = covered.len();
    let mut witnesses = Vec::new();

    grid.mark(start.as_vec(), &mut covered, &mut remaining);

    let mut queue: std::collections::VecDeque<ChildSpec> = std::collections::VecDeque::new();

    // primary orbit under the stay-sliding default, spawning alternatives
    if prefix_counter.fetch_add(1, Ordering::Relaxed) >= PREFIX_LIMIT {
        overflow.store(true, Ordering::Relaxed);
        return Ok((covered, witnesses));
    }
    if let Some(state) = start_state(eng, start)? {
        let mut handler = SpawningHandler::new(cfg.branch_budget);
        let orbit = Machine::new(eng, start, 0.0, cfg.horizon).run(state, &mut handler)?;
        for (_, p) in orbit.samples() {
            grid.mark(p.as_vec(), &mut covered, &mut remaining);
        }
        queue.extend(handler.children);
        if keep_witnesses {
            witnesses.push(orbit);
        }
    }

    while let Some(spec) = queue.pop_front() {
        if remaining == 0 {
            break;
        }
        if prefix_counter.fetch_add(1, Ordering::Relaxed) >= PREFIX_LIMIT {
            overflow.store(true, Ordering::Relaxed);
            break;
        }
        let horizon = cfg.horizon - spec.t;
        if horizon <= 1e-9 {
            continue;
        }
        let mut handler = ForcedHandler::new(spec.choice);
        let machine = Machine::new(eng, start, spec.t, horizon).with_ordinal(spec.ordinal);
        let orbit = machine.run(spec.resume, &mut handler)?;
        for (_, p) in orbit.samples() {
            grid.mark(p.as_vec(), &mut covered, &mut remaining);
        }
        if keep_witnesses && witnesses.len() < 3 {
            witnesses.push(orbit);
        }
    }
    Ok((covered, witnesses))
}

/// Finite transitivity probe: grows reachable sets from every net node and
/// reports whether every ordered pair of nodes was connected.
///
/// Real equilibria of the region fields join the net as extra nodes; orbits
/// started there halt immediately, which is exactly the reachability
/// obstruction they witness.
pub fn reachability_probe(psvf: &Psvf, config: &ProbeConfig) -> Result<ProbeReport> {
    config.validate()?;
    let mut nodes = fibonacci_net(config.nodes, config.seed);
    let mut equilibrium_nodes = 0;
    for eq in psvf.equilibria() {
        if eq.real {
            nodes.push(SpherePoint::new(eq.point).expect("axis points are unit"));
            equilibrium_nodes += 1;
        }
    }
    let grid = NodeGrid::new(&nodes, config.epsilon);
    let eng = Engine::with_opts(psvf, EngineOpts::coarse());
    let prefix_counter = AtomicUsize::new(0);
    let overflow = AtomicBool::new(false);

    let run = || -> Result<Vec<(Vec<bool>, Vec<FilippovOrbit>)>> {
        use rayon::prelude::*;
        nodes
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                reach_row(
                    &eng,
                    *p,
                    &grid,
                    config,
                    &prefix_counter,
                    &overflow,
                    i == 0,
                )
            })
            .collect()
    };

    let rows = match probe_thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }?;

    if overflow.load(Ordering::Relaxed) {
        return Err(Error::BudgetOverflow(PREFIX_LIMIT));
    }

    let mut reachability = Vec::with_capacity(rows.len());
    let mut witnesses = Vec::new();
    for (i, (row, w)) in rows.into_iter().enumerate() {
        reachability.push(row);
        if i == 0 {
            witnesses = w;
        }
    }

    let mut unreached = Vec::new();
    for (u, row) in reachability.iter().enumerate() {
        for (v, hit) in row.iter().enumerate() {
            if !hit {
                unreached.push((u, v));
            }
        }
    }
    let verdict = if unreached.is_empty() {
        Verdict::TransitiveEvidence
    } else {
        Verdict::Fails {
            unreached_pairs: unreached.len(),
            sample: unreached.iter().take(16).copied().collect(),
        }
    };
    Ok(ProbeReport {
        config: *config,
        nodes: nodes.iter().map(|p| p.to_array()).collect(),
        equilibrium_nodes,
        reachability,
        verdict,
        witnesses,
    })
}

fn probe_thread_cap() -> Option<usize> {
    std::env::var("FILIPPOV_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|n| *n > 0)
}

/// Per-theta diagnostics collected by the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepDiagnostics {
    /// Tangency count over all circles; None when a circle has non-isolated
    /// tangencies.
    pub tangency_count: Option<usize>,
    pub crossing_present: bool,
    pub real_equilibria: usize,
    pub equilibrium_on_sigma: bool,
    pub pseudo_equilibria: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub theta: f64,
    pub verdict: Verdict,
    pub diagnostics: SweepDiagnostics,
}

/// Diagnostics for any system: tangency count, crossing presence, equilibria.
pub fn system_diagnostics(psvf: &Psvf) -> SweepDiagnostics {
    let mut tangency_count = Some(0usize);
    let mut crossing_present = false;
    for ci in 0..psvf.circles().len() {
        match find_tangencies(psvf, ci) {
            Ok(list) => {
                if let Some(c) = tangency_count.as_mut() {
                    *c += list.len();
                }
            }
            Err(_) => tangency_count = None,
        }
        for k in 0..1440 {
            let phi = TAU * (k as f64 + 0.5) / 1440.0;
            let p = psvf.circle(ci).param(phi);
            if let Ok((a, b)) = normal_components(psvf, ci, p.as_vec()) {
                if classify_components(a, b) == RegionClass::Crossing {
                    crossing_present = true;
                }
            }
        }
    }
    let eqs = psvf.equilibria();
    let pseudo = (0..psvf.circles().len())
        .map(|ci| pseudo_equilibria(psvf, ci).map(|v| v.len()).unwrap_or(0))
        .sum();
    SweepDiagnostics {
        tangency_count,
        crossing_present,
        real_equilibria: eqs.iter().filter(|e| e.real).count(),
        equilibrium_on_sigma: eqs.iter().any(|e| e.real && e.on_sigma),
        pseudo_equilibria: pseudo,
    }
}

/// Probe the rotation family across a list of band angles.
pub fn theta_sweep(thetas: &[f64], config: &ProbeConfig) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let psvf = make_z_theta(theta)?;
        let report = reachability_probe(&psvf, config)?;
        rows.push(SweepRow {
            theta,
            verdict: report.verdict,
            diagnostics: system_diagnostics(&psvf),
        });
    }
    Ok(rows)
}

/// Classification census of one circle.
#[derive(Debug, Clone, Serialize)]
pub struct CircleCensus {
    pub circle_id: u32,
    pub sliding: usize,
    pub escaping: usize,
    pub crossing: usize,
    pub tangency: usize,
}

/// Evidence that sliding and escaping regions exist and are connected by
/// branch-distinct orbits.
#[derive(Debug, Clone, Serialize)]
pub struct EvidenceReport {
    pub census: Vec<CircleCensus>,
    pub sliding_nonempty: bool,
    pub escaping_nonempty: bool,
    /// Orbits from one escaping segment that reach a sliding segment, with
    /// pairwise distinct branch logs.
    pub witness_count: usize,
    #[serde(skip)]
    pub witnesses: Vec<FilippovOrbit>,
}

/// Census plus escaping-to-sliding witness orbits (budget many).
pub fn sliding_escaping_evidence(psvf: &Psvf, config: &ProbeConfig) -> Result<EvidenceReport> {
    const CENSUS_SAMPLES: usize = 720;
    let mut census = Vec::new();
    let mut escape_start: Option<SpherePoint> = None;
    for ci in 0..psvf.circles().len() {
        let circle = psvf.circle(ci);
        let mut counts = CircleCensus {
            circle_id: circle.id,
            sliding: 0,
            escaping: 0,
            crossing: 0,
            tangency: 0,
        };
        let mut escaping_phis = Vec::new();
        for k in 0..CENSUS_SAMPLES {
            let phi = TAU * (k as f64 + 0.5) / CENSUS_SAMPLES as f64;
            let p = circle.param(phi);
            let (a, b) = normal_components(psvf, ci, p.as_vec())?;
            match classify_components(a, b) {
                RegionClass::Sliding => counts.sliding += 1,
                RegionClass::Escaping => {
                    counts.escaping += 1;
                    escaping_phis.push(phi);
                }
                RegionClass::Crossing => counts.crossing += 1,
                RegionClass::Tangency(_) => counts.tangency += 1,
            }
        }
        if escape_start.is_none() && !escaping_phis.is_empty() {
            // midpoint of the sampled escaping set
            let phi = escaping_phis[escaping_phis.len() / 2];
            escape_start = Some(circle.param(phi));
        }
        census.push(counts);
    }
    let sliding_nonempty = census.iter().any(|c| c.sliding > 0);
    let escaping_nonempty = census.iter().any(|c| c.escaping > 0);

    let mut witnesses = Vec::new();
    if let Some(start) = escape_start {
        let prefix = FilippovOrbit {
            start,
            arcs: Vec::new(),
            branch_log: Vec::new(),
        };
        let eng = Engine::with_opts(psvf, EngineOpts::coarse());
        let continuations = crate::orbit::enumerate_branches_with(
            &eng,
            &prefix,
            config.branch_budget,
            4.0 * PI,
        )?;
        for orbit in continuations {
            let reaches_sliding = orbit
                .arcs
                .iter()
                .any(|a| matches!(a.mode, crate::orbit::ArcMode::SlidingFlow(_)));
            if reaches_sliding
                && !witnesses
                    .iter()
                    .any(|w: &FilippovOrbit| w.branch_log == orbit.branch_log)
            {
                witnesses.push(orbit);
            }
        }
    }
    Ok(EvidenceReport {
        census,
        sliding_nonempty,
        escaping_nonempty,
        witness_count: witnesses.len(),
        witnesses,
    })
}

/// Case labels of the two-zone piecewise-linear analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TwoZoneCase {
    /// The circle is not a great circle: some center is real off the circle.
    NotGreatCircle,
    /// Great circle, but a rotation axis leaves the plane: real center.
    RealCenterOffSigma,
    /// All four equilibria on the circle, no sliding or escaping: a pair of
    /// elliptic double tangencies.
    EquilibriaOnSigmaElliptic,
    /// All four equilibria on the circle with sliding and escaping segments
    /// whose boundaries are equilibria (invariant).
    EquilibriaOnSigmaFourTangencies,
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoZoneReport {
    pub case: TwoZoneCase,
    pub verdict: Verdict,
    pub equilibria: Vec<EquilibriumSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumSummary {
    pub point: [f64; 3],
    pub region: usize,
    pub real: bool,
    pub on_sigma: bool,
}

/// Check a two-zone piecewise-linear system: validates skew-symmetry, labels
/// the obstruction case, and runs the probe.
pub fn two_zone_check(
    a_above: Mat3,
    a_below: Mat3,
    circle: PlaneCircle,
    config: &ProbeConfig,
) -> Result<TwoZoneReport> {
    let f_above = crate::psvf::LinearField::new(a_above)?;
    let f_below = crate::psvf::LinearField::new(a_below)?;
    let psvf = Psvf::new(
        vec![circle],
        vec![
            Region {
                signs: vec![1],
                field: crate::psvf::Field::linear("A1", f_above),
            },
            Region {
                signs: vec![-1],
                field: crate::psvf::Field::linear("A2", f_below),
            },
        ],
    )?;

    let eqs = psvf.equilibria();
    let case = if circle.offset.abs() > 1e-12 {
        TwoZoneCase::NotGreatCircle
    } else if eqs.iter().any(|e| e.real && !e.on_sigma) {
        TwoZoneCase::RealCenterOffSigma
    } else {
        // all four equilibria sit on the great circle
        let mut has_slide_or_escape = false;
        for k in 0..1440 {
            let phi = TAU * (k as f64 + 0.5) / 1440.0;
            let p = psvf.circle(0).param(phi);
            let (a, b) = normal_components(&psvf, 0, p.as_vec())?;
            if matches!(
                classify_components(a, b),
                RegionClass::Sliding | RegionClass::Escaping
            ) {
                has_slide_or_escape = true;
                break;
            }
        }
        if has_slide_or_escape {
            TwoZoneCase::EquilibriaOnSigmaFourTangencies
        } else {
            TwoZoneCase::EquilibriaOnSigmaElliptic
        }
    };

    let report = reachability_probe(&psvf, config)?;
    Ok(TwoZoneReport {
        case,
        verdict: report.verdict,
        equilibria: eqs
            .iter()
            .map(|e| EquilibriumSummary {
                point: e.point.to_array(),
                region: e.region,
                real: e.real,
                on_sigma: e.on_sigma,
            })
            .collect(),
    })
}

/// Connection measurement from the sliding-exit tangency to the
/// escaping-entry tangency.
#[derive(Debug, Clone, Serialize)]
pub struct ConnectionData {
    pub t_a: [f64; 3],
    pub t_b: [f64; 3],
    /// Time of first switching-manifold contact of the unique exit orbit, or
    /// of the closest approach when no contact occurs.
    pub arrival_time: f64,
    pub arrival_point: [f64; 3],
    /// Ambient distance from the arrival point to the unperturbed entry
    /// tangency.
    pub arrival_offset: f64,
    pub contact: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustnessReport {
    pub bump_sup_norm: f64,
    pub base: ConnectionData,
    pub perturbed: ConnectionData,
    pub delta_offset: f64,
    pub delta_time: f64,
    pub verdict_base: Option<Verdict>,
    pub verdict_perturbed: Option<Verdict>,
}

/// Sliding-exit tangencies: exactly one visible side, sliding flows into the
/// point. Ordered by (circle, phi).
fn sliding_exit_tangencies(psvf: &Psvf) -> Result<Vec<(usize, TangencyInfo)>> {
    let mut out = Vec::new();
    for ci in 0..psvf.circles().len() {
        let Ok(list) = find_tangencies(psvf, ci) else {
            continue;
        };
        for info in list {
            if info.visible_sides().len() != 1 {
                continue;
            }
            // the segment behind (against the extended flow) must be sliding
            let Ok(speed) = sliding_speed(psvf, ci, info.phi) else {
                continue;
            };
            if speed.abs() < 1e-11 {
                continue;
            }
            let behind = psvf.circle(ci).param(info.phi - speed.signum() * 1e-4);
            let (a, b) = normal_components(psvf, ci, behind.as_vec())?;
            if classify_components(a, b) == RegionClass::Sliding {
                out.push((ci, info));
            }
        }
    }
    Ok(out)
}

/// Escaping-entry tangencies: the extended field carries the point into an
/// escaping segment.
fn escaping_entry_tangencies(psvf: &Psvf) -> Result<Vec<(usize, TangencyInfo)>> {
    let mut out = Vec::new();
    for ci in 0..psvf.circles().len() {
        let Ok(list) = find_tangencies(psvf, ci) else {
            continue;
        };
        for info in list {
            let Ok(speed) = sliding_speed(psvf, ci, info.phi) else {
                continue;
            };
            if speed.abs() < 1e-11 {
                continue;
            }
            let ahead = psvf.circle(ci).param(info.phi + speed.signum() * 1e-4);
            let (a, b) = normal_components(psvf, ci, ahead.as_vec())?;
            if classify_components(a, b) == RegionClass::Escaping {
                out.push((ci, info));
            }
        }
    }
    Ok(out)
}

fn measure_connection(
    psvf: &Psvf,
    t_a: &(usize, TangencyInfo),
    t_b_point: SpherePoint,
) -> Result<ConnectionData> {
    let (ci, info) = t_a;
    let side = info.visible_sides()[0];
    let region = psvf.side_region(*ci, info.point.as_vec(), side)?;
    let arc = crate::orbit::flow_region(psvf, region, info.point, 3.0 * PI)?;
    use crate::orbit::TerminalEvent;
    let (arrival_time, arrival_point, contact) = match &arc.terminal {
        TerminalEvent::HitCircle(_) | TerminalEvent::ReachedTangency(_) => {
            (arc.t_end, arc.end_point(), true)
        }
        _ => {
            // no contact: closest approach to the entry tangency
            let mut best = (arc.t_end, arc.end_point(), f64::INFINITY);
            for (t, p) in &arc.samples {
                let d = (p.as_vec() - t_b_point.as_vec()).norm();
                if d < best.2 {
                    best = (*t, *p, d);
                }
            }
            (best.0, best.1, false)
        }
    };
    Ok(ConnectionData {
        t_a: info.point.to_array(),
        t_b: t_b_point.to_array(),
        arrival_time,
        arrival_point: arrival_point.to_array(),
        arrival_offset: (arrival_point.as_vec() - t_b_point.as_vec()).norm(),
        contact,
    })
}

/// Compare the tangency-to-tangency connection before and after a bump.
pub fn robustness_experiment(
    psvf: &Psvf,
    bump: &BumpPerturbation,
    config: &ProbeConfig,
    with_probe: bool,
) -> Result<RobustnessReport> {
    let exits = sliding_exit_tangencies(psvf)?;
    let t_a = exits
        .first()
        .ok_or_else(|| Error::InvalidSystem("no sliding-exit tangency found".into()))?;

    // entry tangency the unperturbed exit orbit approaches
    let entries = escaping_entry_tangencies(psvf)?;
    if entries.is_empty() {
        return Err(Error::InvalidSystem("no escaping-entry tangency found".into()));
    }
    let probe_arc = {
        let side = t_a.1.visible_sides()[0];
        let region = psvf.side_region(t_a.0, t_a.1.point.as_vec(), side)?;
        crate::orbit::flow_region(psvf, region, t_a.1.point, 3.0 * PI)?
    };
    let end = probe_arc.end_point();
    let t_b = entries
        .iter()
        .min_by(|x, y| {
            let dx = (x.1.point.as_vec() - end.as_vec()).norm();
            let dy = (y.1.point.as_vec() - end.as_vec()).norm();
            dx.partial_cmp(&dy).unwrap()
        })
        .map(|(_, info)| info.point)
        .unwrap();

    let center = SpherePoint::new(bump.center)?;
    let region = psvf.region_of(center)?;
    let (perturbed, sup) = apply_bump(psvf, bump, region)?;

    let base = measure_connection(psvf, t_a, t_b)?;
    let pert = measure_connection(&perturbed, t_a, t_b)?;
    let (verdict_base, verdict_perturbed) = if with_probe {
        (
            Some(reachability_probe(psvf, config)?.verdict),
            Some(reachability_probe(&perturbed, config)?.verdict),
        )
    } else {
        (None, None)
    };
    Ok(RobustnessReport {
        bump_sup_norm: sup,
        delta_offset: (pert.arrival_offset - base.arrival_offset).abs(),
        delta_time: (pert.arrival_time - base.arrival_time).abs(),
        base,
        perturbed: pert,
        verdict_base,
        verdict_perturbed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_3;

    const S3H: f64 = 0.866_025_403_784_438_6;

    fn pt(x: f64, y: f64, z: f64) -> SpherePoint {
        SpherePoint::from_coords(x, y, z).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let p = closed_form_flow(BuiltinFlow::X, PI / 2.0, pt(0.0, 0.0, 1.0));
        assert!((p.as_vec() - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);

        let q = closed_form_flow(BuiltinFlow::Y, PI, pt(0.0, S3H, 0.5));
        assert!((q.as_vec() - Vec3::new(0.0, -S3H, -0.5)).norm() < 1e-14);

        let r0 = pt(0.36, -0.8, 0.48);
        assert_eq!(closed_form_flow(BuiltinFlow::X, 0.0, r0).to_array(), r0.to_array());
        assert!((closed_form_flow(BuiltinFlow::Y, 0.0, r0).as_vec() - r0.as_vec()).norm() < 1e-15);
    }

    #[test]
    fn closed_form_flows_are_rodrigues_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let axis_x = Vec3::new(0.0, 1.0, 0.0);
        let axis_y = Vec3::new(0.0, -0.5, S3H);
        for _ in 0..1000 {
            let z = 2.0 * uniform(&mut rng) - 1.0;
            let phi = TAU * uniform(&mut rng);
            let r = (1.0 - z * z).sqrt();
            let p = pt(r * phi.cos(), r * phi.sin(), z);
            let t = TAU * uniform(&mut rng);
            let ex = Mat3::rotation(axis_x, t).mul_vec(p.as_vec());
            let ey = Mat3::rotation(axis_y, t).mul_vec(p.as_vec());
            assert!((closed_form_flow(BuiltinFlow::X, t, p).as_vec() - ex).norm() < 1e-12);
            assert!((closed_form_flow(BuiltinFlow::Y, t, p).as_vec() - ey).norm() < 1e-12);
        }
    }

    #[test]
    fn fibonacci_net_is_unit_and_seed_rotates() {
        let a = fibonacci_net(100, 0);
        let b = fibonacci_net(100, 1);
        assert_eq!(a.len(), 100);
        for p in &a {
            assert_abs_diff_eq!(p.as_vec().norm(), 1.0, epsilon = 1e-12);
        }
        assert!((a[0].as_vec() - b[0].as_vec()).norm() > 1e-3);
        // same seed reproduces exactly
        let a2 = fibonacci_net(100, 0);
        assert_eq!(a[17].to_array(), a2[17].to_array());
    }

    #[test]
    fn probe_config_validation() {
        let bad = ProbeConfig { nodes: 4, ..Default::default() };
        assert!(bad.validate().is_err());
        let tight = ProbeConfig { nodes: 200, epsilon: 0.05, ..Default::default() };
        assert!(tight.validate().is_err());
        assert!(ProbeConfig::default().validate().is_ok());
    }

    #[test]
    fn small_probe_finds_transitive_evidence_at_pi_three() {
        let psvf = make_z_theta(FRAC_PI_3).unwrap();
        let config = ProbeConfig {
            nodes: 48,
            epsilon: 0.45,
            horizon: 80.0,
            branch_budget: 4,
            seed: 0,
        };
        let report = reachability_probe(&psvf, &config).unwrap();
        assert_eq!(report.verdict, Verdict::TransitiveEvidence, "{:?}", report.verdict);
        assert!(!report.witnesses.is_empty());
    }

    #[test]
    fn small_probe_fails_with_real_band_equilibrium() {
        let psvf = make_z_theta(0.45).unwrap();
        let config = ProbeConfig {
            nodes: 48,
            epsilon: 0.45,
            horizon: 60.0,
            branch_budget: 4,
            seed: 0,
        };
        let report = reachability_probe(&psvf, &config).unwrap();
        assert_eq!(report.equilibrium_nodes, 2);
        assert!(!report.verdict.is_transitive());
    }

    #[test]
    fn evidence_on_the_rotation_family() {
        let psvf = make_z_theta(FRAC_PI_3).unwrap();
        let report =
            sliding_escaping_evidence(&psvf, &ProbeConfig::default()).unwrap();
        assert!(report.sliding_nonempty && report.escaping_nonempty);
        for census in &report.census {
            assert!(census.sliding > 0 && census.escaping > 0);
            assert_eq!(census.crossing, 0);
        }
        assert!(report.witness_count >= 4, "witnesses {}", report.witness_count);
    }

    #[test]
    fn crossing_only_system_has_no_witnesses() {
        use crate::psvf::{Field, LinearField, Region};
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
        let report = sliding_escaping_evidence(&psvf, &ProbeConfig::default()).unwrap();
        assert!(!report.sliding_nonempty && !report.escaping_nonempty);
        assert_eq!(report.witness_count, 0);
    }

    #[test]
    fn two_zone_equilibria_on_sigma_subcases() {
        let small = ProbeConfig {
            nodes: 48,
            epsilon: 0.45,
            horizon: 60.0,
            branch_budget: 4,
            seed: 0,
        };
        let great = PlaneCircle::new(Vec3::Z, 0.0, 1).unwrap();
        // rotations about x and y: all four equilibria on the circle, with
        // sliding and escaping quadrants between them
        let four = two_zone_check(Mat3::skew(Vec3::X), Mat3::skew(Vec3::Y), great, &small).unwrap();
        assert_eq!(four.case, TwoZoneCase::EquilibriaOnSigmaFourTangencies);
        assert!(!four.verdict.is_transitive());
        assert!(four.equilibria.iter().all(|e| e.on_sigma));

        // equal axes with different speeds: crossing everywhere off the
        // equilibria, the elliptic double-tangency case
        let elliptic = two_zone_check(
            Mat3::skew(Vec3::X),
            Mat3::skew(Vec3::X * 2.0),
            great,
            &small,
        )
        .unwrap();
        assert_eq!(elliptic.case, TwoZoneCase::EquilibriaOnSigmaElliptic);
        assert!(!elliptic.verdict.is_transitive());
    }

    #[test]
    fn exit_and_entry_tangency_identification() {
        let psvf = make_z_theta(FRAC_PI_3).unwrap();
        let exits = sliding_exit_tangencies(&psvf).unwrap();
        // one exit per circle: the parabolic tangencies
        assert_eq!(exits.len(), 2);
        assert!((exits[0].1.point.as_vec() - Vec3::new(0.0, S3H, 0.5)).norm() < 1e-9);
        assert!((exits[1].1.point.as_vec() - Vec3::new(0.0, -S3H, -0.5)).norm() < 1e-9);
        let entries = escaping_entry_tangencies(&psvf).unwrap();
        assert_eq!(entries.len(), 2);
    }
}

