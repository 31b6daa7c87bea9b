//! Orbit engine behavior on the three-zone rotation family.

use filippov::classify::DoubleType;
use filippov::orbit::{
    enumerate_branches, flow_field, flow_region, integrate_orbit, orbit_to_csv, slide,
    validate_orbit, ArcMode, BranchPolicy, Decision, FilippovOrbit, Side, SlideMode,
    TerminalEvent,
};
use filippov::psvf::{make_z_theta, Psvf};
use filippov::sphere::{SpherePoint, Vec3};
use filippov::Error;
use std::f64::consts::{FRAC_PI_3, PI, TAU};

const S3H: f64 = 0.866_025_403_784_438_6;

fn z3() -> Psvf {
    make_z_theta(FRAC_PI_3).unwrap()
}

fn pt(x: f64, y: f64, z: f64) -> SpherePoint {
    SpherePoint::from_coords(x, y, z).unwrap()
}

#[test]
fn cap_flow_hits_upper_circle_at_closed_form_point() {
    let psvf = z3();
    let arc = flow_region(&psvf, 0, pt(0.0, 0.0, 1.0), TAU).unwrap();
    assert_eq!(arc.terminal, TerminalEvent::HitCircle(1));
    // north pole flows as (sin t, 0, cos t); z = 1/2 at t = pi/3
    assert!((arc.t_end - FRAC_PI_3).abs() < 1e-9, "hit time {}", arc.t_end);
    let hit = arc.end_point().as_vec();
    assert!((hit - Vec3::new(S3H, 0.0, 0.5)).norm() < 1e-8);
}

#[test]
fn band_flow_from_upper_tangency_grazes_lower_antipode_at_pi() {
    let psvf = z3();
    let arc = flow_region(&psvf, 1, pt(0.0, S3H, 0.5), 4.0).unwrap();
    match &arc.terminal {
        TerminalEvent::ReachedTangency(info) => {
            assert_eq!(info.circle, 2);
            assert_eq!(info.double_type, DoubleType::Parabolic);
        }
        other => panic!("expected tangency terminal, got {other:?}"),
    }
    assert!((arc.t_end - PI).abs() < 1e-6, "graze time {}", arc.t_end);
    let end = arc.end_point().as_vec();
    assert!((end - Vec3::new(0.0, -S3H, -0.5)).norm() < 1e-8);
}

#[test]
fn horizon_cutoff_is_exact() {
    let psvf = z3();
    let arc = flow_region(&psvf, 0, pt(0.0, 0.0, 1.0), 0.1).unwrap();
    assert_eq!(arc.terminal, TerminalEvent::HorizonReached);
    assert_eq!(arc.t_end, 0.1);
}

#[test]
fn numerical_flow_matches_rotation_oracle() {
    let psvf = z3();
    // the band flow is the rigid rotation about its axis
    let axis = Vec3::new(0.0, -0.5, S3H);
    let p0 = pt(0.9, 0.1, -0.424_264_068_711_928_45);
    let samples = flow_field(psvf.field_of(1), p0, TAU, 0.05).unwrap();
    let mut worst: f64 = 0.0;
    for (t, p) in samples {
        let expected = filippov::sphere::Mat3::rotation(axis, t).mul_vec(p0.as_vec());
        worst = worst.max((p.as_vec() - expected).norm());
    }
    assert!(worst < 1e-8, "max ambient error {worst:.3e}");
}

#[test]
fn sliding_arc_reaches_exit_tangency_counter_clockwise() {
    let psvf = z3();
    let arc = slide(&psvf, 0, pt(S3H, 0.0, 0.5), 10.0, SlideMode::Sliding).unwrap();
    match &arc.terminal {
        TerminalEvent::ReachedTangency(info) => {
            assert!((info.point.as_vec() - Vec3::new(0.0, S3H, 0.5)).norm() < 1e-8);
        }
        other => panic!("expected tangency, got {other:?}"),
    }
    // quarter turn at angular speed sqrt(3)/3
    let duration = (PI / 2.0) / (3.0f64.sqrt() / 3.0);
    assert!((arc.t_end - duration).abs() < 1e-6, "duration {}", arc.t_end);
    // counter-clockwise: y increases from 0 toward the tangency
    let mid = arc.samples[arc.samples.len() / 2].1.as_vec();
    assert!(mid.y > 0.0 && mid.x > 0.0);
}

#[test]
fn escaping_slide_continues_toward_sliding_boundary() {
    let psvf = z3();
    // the escaping half of the lower circle is x > 0
    let arc = slide(&psvf, 1, pt(S3H, 0.0, -0.5), 10.0, SlideMode::Escaping).unwrap();
    match &arc.terminal {
        TerminalEvent::ReachedTangency(info) => {
            // elliptic boundary where the sliding half begins
            assert_eq!(info.double_type, DoubleType::Elliptic);
            assert!((info.point.as_vec() - Vec3::new(0.0, S3H, -0.5)).norm() < 1e-8);
        }
        other => panic!("expected tangency, got {other:?}"),
    }
}

#[test]
fn slide_rejects_wrong_mode() {
    let psvf = z3();
    let err = slide(&psvf, 0, pt(S3H, 0.0, 0.5), 1.0, SlideMode::Escaping);
    assert!(matches!(err, Err(Error::WrongMode)));
}

#[test]
fn stay_sliding_orbit_tours_regions_circles_and_tangencies() {
    let psvf = z3();
    let p0 = SpherePoint::new(Vec3::new(0.1, 0.1, 0.99).normalize().unwrap()).unwrap();
    let orbit = integrate_orbit(&psvf, p0, 20.0, &BranchPolicy::stay()).unwrap();
    let modes: Vec<ArcMode> = orbit.arcs.iter().map(|a| a.mode).collect();
    assert!(matches!(modes[0], ArcMode::RegionFlow(0)), "starts in the upper cap");
    assert!(modes.contains(&ArcMode::SlidingFlow(1)));
    assert!(modes.contains(&ArcMode::RegionFlow(1)), "crosses the band");
    assert!(modes.contains(&ArcMode::EscapingSlide(2)));
    assert!(modes.contains(&ArcMode::SlidingFlow(2)));
    // the unique exit from the upper sliding boundary is logged
    assert!(orbit
        .branch_log
        .iter()
        .any(|r| matches!(r.decision, Decision::UniqueExit(Side::Below))));
    // the band arc from the exit tangency reaches the antipodal tangency
    let band = orbit
        .arcs
        .iter()
        .find(|a| matches!(a.mode, ArcMode::RegionFlow(1)))
        .unwrap();
    assert!((band.t_end - band.t_start - PI).abs() < 1e-6);
    let report = validate_orbit(&psvf, &orbit);
    assert!(report.pass, "{:?}", report.first_violation);
}

#[test]
fn zero_horizon_orbit_has_no_arcs() {
    let psvf = z3();
    let orbit = integrate_orbit(&psvf, pt(0.0, 0.0, 1.0), 0.0, &BranchPolicy::stay()).unwrap();
    assert!(orbit.arcs.is_empty());
    assert!(orbit.branch_log.is_empty());
}

#[test]
fn deterministic_replay_and_rerun() {
    let psvf = z3();
    let p0 = SpherePoint::new(Vec3::new(-0.2, 0.4, 0.89).normalize().unwrap()).unwrap();
    let policy = BranchPolicy::scheduled(vec![
        (1.0, Side::Below),
        (0.7, Side::Above),
        (2.0, Side::Below),
        (1.0, Side::Above),
        (1.0, Side::Below),
        (1.0, Side::Above),
    ]);
    let a = integrate_orbit(&psvf, p0, 25.0, &policy).unwrap();
    let b = integrate_orbit(&psvf, p0, 25.0, &policy).unwrap();
    assert_eq!(a.branch_log, b.branch_log);
    assert_eq!(a.arcs.len(), b.arcs.len());
    for (x, y) in a.arcs.iter().zip(&b.arcs) {
        assert!((x.t_end - y.t_end).abs() <= 1e-12);
        assert!((x.end_point().as_vec() - y.end_point().as_vec()).norm() <= 1e-12);
    }

    // replaying the recorded log reproduces the orbit
    let replay = integrate_orbit(&psvf, p0, 25.0, &BranchPolicy::replay(&a)).unwrap();
    assert_eq!(a.branch_log, replay.branch_log);
    assert_eq!(a.arcs.len(), replay.arcs.len());
    for (x, y) in a.arcs.iter().zip(&replay.arcs) {
        assert!((x.end_point().as_vec() - y.end_point().as_vec()).norm() <= 1e-9);
    }

    // the scheduled orbit visits the lower cap
    assert!(a.arcs.iter().any(|arc| matches!(arc.mode, ArcMode::RegionFlow(2))));
    let report = validate_orbit(&psvf, &a);
    assert!(report.pass, "{:?}", report.first_violation);
}

fn escaping_prefix() -> FilippovOrbit {
    // a zero-length prefix sitting on the escaping half of the lower circle
    FilippovOrbit {
        start: pt(S3H, 0.0, -0.5),
        arcs: Vec::new(),
        branch_log: Vec::new(),
    }
}

#[test]
fn branch_enumeration_budgets() {
    let psvf = z3();
    let prefix = escaping_prefix();

    let one = enumerate_branches(&psvf, &prefix, 1).unwrap();
    assert_eq!(one.len(), 1);
    assert!(matches!(
        one[0].branch_log[0].decision,
        Decision::ExitNow(Side::Above)
    ));

    let two = enumerate_branches(&psvf, &prefix, 2).unwrap();
    assert_eq!(two.len(), 2);
    assert!(matches!(two[0].branch_log[0].decision, Decision::ExitNow(Side::Above)));
    assert!(matches!(two[1].branch_log[0].decision, Decision::ExitNow(Side::Below)));

    let six = enumerate_branches(&psvf, &prefix, 6).unwrap();
    assert_eq!(six.len(), 6);
    // continuations genuinely diverge: distinct decision logs, and the orbits
    // sit at pairwise separated points once every branch has played out
    for i in 0..six.len() {
        for j in (i + 1)..six.len() {
            assert_ne!(six[i].branch_log, six[j].branch_log);
            let d = (six[i].end_point().as_vec() - six[j].end_point().as_vec()).norm();
            assert!(d >= 1e-3, "branches {i} and {j} only {d:.2e} apart");
        }
    }
}

#[test]
fn branch_enumeration_rejects_non_branch_points() {
    let psvf = z3();
    let prefix = FilippovOrbit {
        start: pt(0.0, 0.0, 1.0),
        arcs: Vec::new(),
        branch_log: Vec::new(),
    };
    assert!(matches!(
        enumerate_branches(&psvf, &prefix, 4),
        Err(Error::NotABranchPoint)
    ));
}

#[test]
fn validator_rejects_injected_off_sphere_sample() {
    let psvf = z3();
    let mut orbit = integrate_orbit(&psvf, pt(0.0, 0.0, 1.0), 2.0, &BranchPolicy::stay()).unwrap();
    assert!(validate_orbit(&psvf, &orbit).pass);
    let arc = &mut orbit.arcs[0];
    let k = arc.samples.len() / 2;
    let (t, p) = arc.samples[k];
    let shifted = Vec3::new(p.as_vec().x + 1e-3, p.as_vec().y, p.as_vec().z)
        .normalize()
        .unwrap();
    arc.samples[k] = (t, SpherePoint::new(shifted).unwrap());
    let report = validate_orbit(&psvf, &orbit);
    assert!(!report.pass);
}

#[test]
fn antipodal_image_of_orbit_validates_after_id_remap() {
    let psvf = z3();
    let p0 = SpherePoint::new(Vec3::new(0.15, -0.2, 0.96).normalize().unwrap()).unwrap();
    let orbit = integrate_orbit(&psvf, p0, 12.0, &BranchPolicy::stay()).unwrap();
    assert!(validate_orbit(&psvf, &orbit).pass);
    // negate every sample; the construction is antipodally symmetric with the
    // circles and caps swapped
    let mapped = FilippovOrbit {
        start: orbit.start.antipode(),
        arcs: orbit
            .arcs
            .iter()
            .map(|a| filippov::orbit::OrbitArc {
                mode: match a.mode {
                    ArcMode::RegionFlow(0) => ArcMode::RegionFlow(2),
                    ArcMode::RegionFlow(2) => ArcMode::RegionFlow(0),
                    ArcMode::RegionFlow(r) => ArcMode::RegionFlow(r),
                    ArcMode::SlidingFlow(1) => ArcMode::SlidingFlow(2),
                    ArcMode::SlidingFlow(2) => ArcMode::SlidingFlow(1),
                    ArcMode::SlidingFlow(i) => ArcMode::SlidingFlow(i),
                    ArcMode::EscapingSlide(1) => ArcMode::EscapingSlide(2),
                    ArcMode::EscapingSlide(2) => ArcMode::EscapingSlide(1),
                    ArcMode::EscapingSlide(i) => ArcMode::EscapingSlide(i),
                },
                t_start: a.t_start,
                t_end: a.t_end,
                samples: a.samples.iter().map(|(t, p)| (*t, p.antipode())).collect(),
                terminal: TerminalEvent::HorizonReached,
            })
            .collect(),
        branch_log: Vec::new(),
    };
    let report = validate_orbit(&psvf, &mapped);
    assert!(report.pass, "{:?}", report.first_violation);
}

#[test]
fn exhausted_schedule_is_an_error() {
    let psvf = z3();
    let p0 = SpherePoint::new(Vec3::new(0.1, 0.1, 0.99).normalize().unwrap()).unwrap();
    // one entry cannot cover the repeated escaping encounters over 40 units
    let policy = BranchPolicy::scheduled(vec![(0.5, Side::Below)]);
    assert!(matches!(
        integrate_orbit(&psvf, p0, 40.0, &policy),
        Err(Error::PolicyExhausted)
    ));
}

#[test]
fn time_reversed_system_carries_the_conjugate_orbit() {
    // rotation by pi about the x axis conjugates the system to its negation,
    // swapping the two circles and the two caps while preserving arc modes
    let psvf = z3();
    let neg = psvf.negated();
    let p0 = SpherePoint::new(Vec3::new(0.3, 0.2, 0.93).normalize().unwrap()).unwrap();
    let orbit = integrate_orbit(&psvf, p0, 15.0, &BranchPolicy::stay()).unwrap();
    assert!(orbit.arcs.len() >= 4);
    let conj = |p: SpherePoint| {
        let [x, y, z] = p.to_array();
        SpherePoint::from_coords(x, -y, -z).unwrap()
    };
    let mapped = FilippovOrbit {
        start: conj(orbit.start),
        arcs: orbit
            .arcs
            .iter()
            .map(|a| filippov::orbit::OrbitArc {
                mode: match a.mode {
                    ArcMode::RegionFlow(0) => ArcMode::RegionFlow(2),
                    ArcMode::RegionFlow(2) => ArcMode::RegionFlow(0),
                    ArcMode::RegionFlow(r) => ArcMode::RegionFlow(r),
                    ArcMode::SlidingFlow(i) => ArcMode::SlidingFlow(3 - i),
                    ArcMode::EscapingSlide(i) => ArcMode::EscapingSlide(3 - i),
                },
                t_start: a.t_start,
                t_end: a.t_end,
                samples: a.samples.iter().map(|(t, p)| (*t, conj(*p))).collect(),
                terminal: TerminalEvent::HorizonReached,
            })
            .collect(),
        branch_log: Vec::new(),
    };
    let report = validate_orbit(&neg, &mapped);
    assert!(report.pass, "{:?}", report.first_violation);
}

#[test]
fn csv_export_shape() {
    let psvf = z3();
    let orbit = integrate_orbit(&psvf, pt(0.0, 0.0, 1.0), 3.0, &BranchPolicy::stay()).unwrap();
    let csv = orbit_to_csv(&orbit);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,x,y,z,mode,region_or_circle,arc_index"
    );
    let first = lines.next().unwrap();
    assert!(first.starts_with("0.000000000000,"));
    assert!(first.contains(",region,1,0"));
}
