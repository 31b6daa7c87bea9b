//! Dormand-Prince 5(4) stepper with the classic quartic dense output.
//!
//! Small fixed-dimension state, FSAL, error-per-step control. The orbit
//! drivers use the dense interpolant for event localization by bisection.

use crate::error::{Error, Result};

/// Step sizes below this trigger `StalledStep`.
pub const STALL_H: f64 = 1e-14;

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// Fifth-order weights (row 7 of A, FSAL).
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];

/// Difference between the 5th and embedded 4th order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Dense output weights.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

pub struct Stepper<F, const N: usize>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    f: F,
    pub t: f64,
    pub y: [f64; N],
    /// f(t, y), kept consistent with the current state.
    pub dy: [f64; N],
    pub t_prev: f64,
    pub y_prev: [f64; N],
    pub dy_prev: [f64; N],
    h: f64,
    rtol: f64,
    atol: f64,
    cont: [[f64; N]; 5],
    h_last: f64,
    h_max: f64,
}

impl<F, const N: usize> Stepper<F, N>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    pub fn new(f: F, t0: f64, y0: [f64; N], rtol: f64, atol: f64) -> Self {
        let dy = f(t0, &y0);
        Stepper {
            f,
            t: t0,
            y: y0,
            dy,
            t_prev: t0,
            y_prev: y0,
            dy_prev: dy,
            h: 1e-4,
            rtol,
            atol,
            cont: [[0.0; N]; 5],
            h_last: 0.0,
            h_max: f64::INFINITY,
        }
    }

    /// Cap the step size; event scans sample step endpoints, so steps must
    /// stay shorter than the spacing of the events they watch.
    pub fn set_h_max(&mut self, h_max: f64) {
        self.h_max = h_max.max(STALL_H * 4.0);
    }

    /// Advance one accepted step, never past `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<()> {
        debug_assert!(t_limit > self.t);
        let mut k = [[0.0; N]; 7];
        k[0] = self.dy;
        loop {
            let mut h = self.h.min(self.h_max).min(t_limit - self.t);
            if t_limit - self.t - h < 1e-12 * h.max(1.0) {
                h = t_limit - self.t;
            }
            if h < STALL_H {
                return Err(Error::StalledStep(self.t));
            }
            for i in 1..7 {
                let mut yi = self.y;
                for (j, kj) in k.iter().enumerate().take(i) {
                    let a = A[i][j];
                    if a != 0.0 {
                        for (yv, kv) in yi.iter_mut().zip(kj.iter()) {
                            *yv += h * a * kv;
                        }
                    }
                }
                k[i] = (self.f)(self.t + C[i] * h, &yi);
            }
            let mut y_new = self.y;
            for (j, kj) in k.iter().enumerate() {
                if B[j] != 0.0 {
                    for (yv, kv) in y_new.iter_mut().zip(kj.iter()) {
                        *yv += h * B[j] * kv;
                    }
                }
            }
            // weighted rms of the embedded error
            let mut err_sq = 0.0;
            for idx in 0..N {
                let mut e = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    e += E[j] * kj[idx];
                }
                e *= h;
                let sc = self.atol + self.rtol * self.y[idx].abs().max(y_new[idx].abs());
                err_sq += (e / sc) * (e / sc);
            }
            let err = (err_sq / N as f64).sqrt();

            if err <= 1.0 {
                // dense output coefficients for this step
                let delta: [f64; N] = std::array::from_fn(|i| y_new[i] - self.y[i]);
                let bspl: [f64; N] = std::array::from_fn(|i| h * k[0][i] - delta[i]);
                self.cont[0] = self.y;
                self.cont[1] = delta;
                self.cont[2] = bspl;
                self.cont[3] = std::array::from_fn(|i| delta[i] - h * k[6][i] - bspl[i]);
                self.cont[4] = std::array::from_fn(|i| {
                    let mut s = 0.0;
                    for (j, kj) in k.iter().enumerate() {
                        if D[j] != 0.0 {
                            s += D[j] * kj[i];
                        }
                    }
                    h * s
                });
                self.t_prev = self.t;
                self.y_prev = self.y;
                self.dy_prev = k[0];
                self.h_last = h;
                self.t += h;
                self.y = y_new;
                self.dy = k[6];
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                self.h = (h * factor).max(STALL_H * 2.0);
                return Ok(());
            }
            self.h = (h * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0)).max(STALL_H / 2.0);
            if self.h < STALL_H {
                return Err(Error::StalledStep(self.t));
            }
        }
    }

    /// Interpolate within the last accepted step, t in [t_prev, t].
    pub fn dense(&self, t: f64) -> [f64; N] {
        if self.h_last == 0.0 {
            return self.y;
        }
        let theta = ((t - self.t_prev) / self.h_last).clamp(0.0, 1.0);
        let th1 = 1.0 - theta;
        std::array::from_fn(|i| {
            self.cont[0][i]
                + theta
                    * (self.cont[1][i]
                        + th1
                            * (self.cont[2][i]
                                + theta * (self.cont[3][i] + th1 * self.cont[4][i])))
        })
    }

    /// Overwrite the state, e.g. after truncating at an event or projecting
    /// back onto the sphere. Refreshes the cached derivative.
    pub fn reset_state(&mut self, t: f64, y: [f64; N]) {
        self.t = t;
        self.y = y;
        self.dy = (self.f)(t, &y);
    }
}
