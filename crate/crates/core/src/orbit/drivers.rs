//! Low-level arc drivers: region flow with circle-event localization, and the
//! one-dimensional reduced slide ODE along a circle.

use super::rk::Stepper;
use super::{Engine, Side, EQUILIBRIUM_TOL};
use crate::classify::sliding_speed;
use crate::error::{Error, Result};
use crate::sphere::{project_to_sphere, SpherePoint, Vec3};
use std::cell::Cell;

/// Gamma clearance before a circle's events are armed.
const ARM_EPS: f64 = 1e-8;
/// Events this close to the arc start are ignored (chattering hygiene).
const START_DEADBAND: f64 = 1e-10;
/// Turning points are checked for grazing only within this gamma distance.
const GRAZE_WINDOW: f64 = 0.02;
/// Bisection tolerance on event times.
const EVENT_TIME_TOL: f64 = 1e-12;

pub(crate) struct ArcRaw {
    pub t_start: f64,
    pub t_end: f64,
    pub samples: Vec<(f64, SpherePoint)>,
}

pub(crate) enum FlowOutcome {
    Hit { circle_idx: usize, p: SpherePoint },
    Graze { circle_idx: usize, p: SpherePoint },
    Horizon,
    Equilibrium,
}

fn vec_of(y: &[f64; 3]) -> Vec3 {
    Vec3::new(y[0], y[1], y[2])
}

fn arr_of(v: Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Integrate the region field from `p0` for at most `horizon` time units.
pub(crate) fn flow_region_driver(
    eng: &Engine,
    region: usize,
    p0: SpherePoint,
    t0: f64,
    horizon: f64,
) -> Result<(ArcRaw, FlowOutcome)> {
    let psvf = eng.psvf();
    let field = psvf.field_of(region);
    let circles = psvf.circles();
    let t_end_target = t0 + horizon;
    let f = |_t: f64, y: &[f64; 3]| arr_of(field.eval(vec_of(y)));
    let mut stepper = Stepper::new(f, t0, arr_of(p0.as_vec()), eng.opts.rtol, eng.opts.atol);

    let mut armed: Vec<bool> = circles
        .iter()
        .map(|c| c.gamma(p0.as_vec()).abs() > ARM_EPS)
        .collect();
    let mut samples = vec![(t0, p0)];
    let mut next_sample = t0 + eng.opts.sample_dt;

    loop {
        if stepper.t >= t_end_target - 1e-14 {
            let p = project_to_sphere(vec_of(&stepper.y))?;
            push_tail_samples(&mut samples, &stepper, &mut next_sample, t_end_target, eng.opts.sample_dt)?;
            push_endpoint(&mut samples, t_end_target, p);
            return Ok((
                ArcRaw { t_start: t0, t_end: t_end_target, samples },
                FlowOutcome::Horizon,
            ));
        }
        stepper.step(t_end_target)?;
        let (ta, tb) = (stepper.t_prev, stepper.t);

        // event scan over all circles within the accepted step
        let mut best: Option<(f64, usize, bool)> = None; // (t, circle, graze)
        for (ci, circle) in circles.iter().enumerate() {
            let n = circle.normal;
            let ga = circle.gamma(vec_of(&stepper.y_prev));
            let gb = circle.gamma(vec_of(&stepper.y));
            let was_armed = armed[ci];
            if !was_armed && gb.abs() > ARM_EPS {
                armed[ci] = true;
            }
            if !was_armed {
                continue;
            }
            let da = vec_of(&stepper.dy_prev).dot(n);
            let db = vec_of(&stepper.dy).dot(n);
            let gamma_at = |t: f64| circle.gamma(vec_of(&stepper.dense(t)));
            let mut candidate: Option<(f64, bool)> = None;
            if ga * gb < 0.0 {
                let t_star = bisect_zero(&gamma_at, ta, tb, ga);
                candidate = Some((t_star, false));
            } else if da * db < 0.0 && ga.abs().min(gb.abs()) < GRAZE_WINDOW {
                let dgamma_at = |t: f64| {
                    let y = stepper.dense(t);
                    field.eval(vec_of(&y)).dot(n)
                };
                let t_turn = bisect_zero(&dgamma_at, ta, tb, da);
                let g_turn = gamma_at(t_turn);
                if g_turn.abs() <= eng.opts.graze_tol {
                    candidate = Some((t_turn, true));
                } else if g_turn * ga < 0.0 {
                    // dipped through and back within one step
                    let t_star = bisect_zero(&gamma_at, ta, t_turn, ga);
                    candidate = Some((t_star, false));
                }
            }
            if let Some((t_star, graze)) = candidate {
                if t_star - t0 < START_DEADBAND {
                    continue;
                }
                if best.map_or(true, |(tb_, _, _)| t_star < tb_) {
                    best = Some((t_star, ci, graze));
                }
            }
        }

        if let Some((t_star, ci, graze)) = best {
            push_tail_samples(&mut samples, &stepper, &mut next_sample, t_star, eng.opts.sample_dt)?;
            let p_star = circles[ci].snap(vec_of(&stepper.dense(t_star)));
            push_endpoint(&mut samples, t_star, p_star);
            let arc = ArcRaw { t_start: t0, t_end: t_star, samples };
            let outcome = if graze {
                FlowOutcome::Graze { circle_idx: ci, p: p_star }
            } else {
                FlowOutcome::Hit { circle_idx: ci, p: p_star }
            };
            return Ok((arc, outcome));
        }

        push_tail_samples(&mut samples, &stepper, &mut next_sample, tb, eng.opts.sample_dt)?;
        let renorm = project_to_sphere(vec_of(&stepper.y))?;
        stepper.reset_state(tb, arr_of(renorm.as_vec()));
        if vec_of(&stepper.dy).norm() < EQUILIBRIUM_TOL {
            push_endpoint(&mut samples, tb, renorm);
            return Ok((
                ArcRaw { t_start: t0, t_end: tb, samples },
                FlowOutcome::Equilibrium,
            ));
        }
    }
}

fn push_tail_samples<F>(
    samples: &mut Vec<(f64, SpherePoint)>,
    stepper: &Stepper<F, 3>,
    next_sample: &mut f64,
    t_stop: f64,
    dt: f64,
) -> Result<()>
where
    F: Fn(f64, &[f64; 3]) -> [f64; 3],
{
    while *next_sample < t_stop - 1e-12 {
        let y = stepper.dense(*next_sample);
        samples.push((*next_sample, project_to_sphere(Vec3::new(y[0], y[1], y[2]))?));
        *next_sample += dt;
    }
    Ok(())
}

fn push_endpoint(samples: &mut Vec<(f64, SpherePoint)>, t: f64, p: SpherePoint) {
    // drop grid samples that would leave a sliver interval before the endpoint
    while samples.len() >= 2 {
        let tl = samples.last().unwrap().0;
        if t - tl < 5e-4 {
            samples.pop();
        } else {
            break;
        }
    }
    samples.push((t, p));
}

fn bisect_zero(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, v_lo: f64) -> f64 {
    let mut sign_lo = v_lo.signum();
    for _ in 0..90 {
        if hi - lo <= EVENT_TIME_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v == 0.0 {
            return mid;
        }
        if v.signum() == sign_lo {
            lo = mid;
            sign_lo = v.signum();
        } else {
            hi = mid;
        }
    }
    hi
}

pub(crate) enum SlideOutcome {
    /// Reached a zero of one adjacent normal component.
    Boundary { p: SpherePoint },
    PseudoEquilibrium,
    Horizon,
    Exit { p: SpherePoint, side: Side },
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum SlideStop {
    None,
    /// Leave after covering `dphi` of arc angle.
    AtDeltaPhi { dphi: f64, side: Side },
    /// Leave after `dwell` time units on the segment.
    AfterDwell { dwell: f64, side: Side },
}

/// Integrate the reduced ODE dphi/dt = <Z_sigma, e_phi> / r along a circle.
pub(crate) fn slide_driver(
    eng: &Engine,
    circle_idx: usize,
    phi0: f64,
    t0: f64,
    horizon: f64,
    stop: SlideStop,
) -> Result<(ArcRaw, SlideOutcome)> {
    let psvf = eng.psvf();
    let circle = *psvf.circle(circle_idx);
    let radius = circle.radius();
    let speed_err: Cell<bool> = Cell::new(false);
    let f = |_t: f64, y: &[f64; 1]| {
        match sliding_speed(psvf, circle_idx, y[0]) {
            Ok(s) => [s],
            Err(_) => {
                speed_err.set(true);
                [0.0]
            }
        }
    };
    let mut t_limit = t0 + horizon;
    let mut dwell_exit: Option<Side> = None;
    if let SlideStop::AfterDwell { dwell, side } = stop {
        if t0 + dwell < t_limit {
            t_limit = t0 + dwell;
            dwell_exit = Some(side);
        }
    }

    let mut stepper = Stepper::new(f, t0, [phi0], eng.opts.rtol, eng.opts.atol);
    if speed_err.get() {
        return Err(Error::DegenerateDenominator);
    }
    // keep per-step arc angle small enough that boundary zeros cannot pair up
    // inside one step
    let cap_step = |s: &mut Stepper<_, 1>| {
        let speed = s.dy[0].abs().max(1e-4);
        s.set_h_max(0.15 / speed);
    };
    cap_step(&mut stepper);
    let comp_at = |phi: f64| -> Result<(f64, f64)> {
        crate::classify::normal_components(psvf, circle_idx, circle.param(phi).as_vec())
    };
    let (a0, b0) = comp_at(phi0)?;
    let mut armed_a = a0.abs() > ARM_EPS;
    let mut armed_b = b0.abs() > ARM_EPS;
    let mut samples = vec![(t0, circle.param(phi0))];
    let mut next_sample = t0 + eng.opts.sample_dt;
    let mut prev_ab = (a0, b0);

    loop {
        if stepper.t >= t_limit - 1e-14 {
            let phi = stepper.y[0];
            let p = circle.param(phi);
            push_slide_samples(&mut samples, &stepper, &circle, &mut next_sample, t_limit, eng.opts.sample_dt);
            push_endpoint(&mut samples, t_limit, p);
            let arc = ArcRaw { t_start: t0, t_end: t_limit, samples };
            let outcome = match dwell_exit {
                Some(side) => SlideOutcome::Exit { p, side },
                None => SlideOutcome::Horizon,
            };
            return Ok((arc, outcome));
        }
        stepper.step(t_limit)?;
        if speed_err.get() {
            return Err(Error::DegenerateDenominator);
        }
        cap_step(&mut stepper);
        let (ta, tb) = (stepper.t_prev, stepper.t);
        let phi_b = stepper.y[0];
        let (a1, b1) = comp_at(phi_b)?;
        let (a_prev, b_prev) = prev_ab;

        let mut best: Option<f64> = None;
        let was_armed_a = armed_a;
        let was_armed_b = armed_b;
        if !armed_a && a1.abs() > ARM_EPS {
            armed_a = true;
        }
        if !armed_b && b1.abs() > ARM_EPS {
            armed_b = true;
        }
        let phi_at = |t: f64| stepper.dense(t)[0];
        if was_armed_a && a_prev * a1 < 0.0 {
            let fa = |t: f64| comp_at(phi_at(t)).map(|c| c.0).unwrap_or(f64::NAN);
            best = Some(bisect_zero(&fa, ta, tb, a_prev));
        }
        if was_armed_b && b_prev * b1 < 0.0 {
            let fb = |t: f64| comp_at(phi_at(t)).map(|c| c.1).unwrap_or(f64::NAN);
            let t_star = bisect_zero(&fb, ta, tb, b_prev);
            if best.map_or(true, |t| t_star < t) {
                best = Some(t_star);
            }
        }

        // requested arc-length exit
        if let SlideStop::AtDeltaPhi { dphi, side } = stop {
            let covered_prev = (stepper.dense(ta)[0] - phi0).abs();
            let covered_now = (phi_b - phi0).abs();
            if covered_prev < dphi && covered_now >= dphi {
                let g = |t: f64| (phi_at(t) - phi0).abs() - dphi;
                let t_star = bisect_zero(&g, ta, tb, covered_prev - dphi);
                if best.map_or(true, |t| t_star < t) && t_star - t0 > START_DEADBAND {
                    let phi_star = phi_at(t_star);
                    let p = circle.param(phi_star);
                    push_slide_samples(&mut samples, &stepper, &circle, &mut next_sample, t_star, eng.opts.sample_dt);
                    push_endpoint(&mut samples, t_star, p);
                    return Ok((
                        ArcRaw { t_start: t0, t_end: t_star, samples },
                        SlideOutcome::Exit { p, side },
                    ));
                }
            }
        }

        if let Some(t_star) = best {
            if t_star - t0 > START_DEADBAND {
                let phi_star = phi_at(t_star);
                let p = snap_to_catalog(eng, circle_idx, phi_star);
                push_slide_samples(&mut samples, &stepper, &circle, &mut next_sample, t_star, eng.opts.sample_dt);
                push_endpoint(&mut samples, t_star, p);
                return Ok((
                    ArcRaw { t_start: t0, t_end: t_star, samples },
                    SlideOutcome::Boundary { p },
                ));
            }
        }

        push_slide_samples(&mut samples, &stepper, &circle, &mut next_sample, tb, eng.opts.sample_dt);
        prev_ab = (a1, b1);

        // the tangential zero is a zero of the full sliding field on the circle
        let speed_mag = stepper.dy[0].abs() * radius;
        if speed_mag < EQUILIBRIUM_TOL {
            let p = circle.param(phi_b);
            push_endpoint(&mut samples, tb, p);
            return Ok((
                ArcRaw { t_start: t0, t_end: tb, samples },
                SlideOutcome::PseudoEquilibrium,
            ));
        }
    }
}

fn push_slide_samples<F>(
    samples: &mut Vec<(f64, SpherePoint)>,
    stepper: &Stepper<F, 1>,
    circle: &crate::sphere::PlaneCircle,
    next_sample: &mut f64,
    t_stop: f64,
    dt: f64,
) where
    F: Fn(f64, &[f64; 1]) -> [f64; 1],
{
    while *next_sample < t_stop - 1e-12 {
        let phi = stepper.dense(*next_sample)[0];
        samples.push((*next_sample, circle.param(phi)));
        *next_sample += dt;
    }
}

fn snap_to_catalog(eng: &Engine, circle_idx: usize, phi: f64) -> SpherePoint {
    let circle = eng.psvf().circle(circle_idx);
    let p = circle.param(phi);
    if let Some(list) = eng.catalog(circle_idx) {
        for info in list {
            if info.point.geodesic_distance(p) < 1e-5 {
                return info.point;
            }
        }
    }
    p
}
