//! Dormand–Prince 5(4) integrator with continuous extension.
//!
//! The stepper works on caller-owned slices with preallocated stage
//! buffers, so a trace performs no allocation per step. After each accepted
//! step the dense-output polynomial of that step stays available for event
//! localization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at s = {s} (h = {h:e})")]
    StepUnderflow { s: f64, h: f64 },
    #[error("non-finite state at s = {s}")]
    NonFinite { s: f64 },
    #[error("step budget of {0} exhausted")]
    Budget(usize),
}

/// Right-hand side `dy/ds = f(s, y)`.
pub trait System {
    fn dim(&self) -> usize;
    fn rhs(&self, s: f64, y: &[f64], dy: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-10,
            atol: 1e-12,
            h_max: 0.25,
            h_min: 1e-14,
            max_steps: 2_000_000,
        }
    }
}

impl Tolerances {
    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self.atol = rtol * 1e-2;
        self
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integration state: current point, proposed step, stage buffers and the
/// dense polynomial of the last accepted step.
pub struct Dopri5<'a, S: System> {
    sys: &'a S,
    tol: Tolerances,
    pub s: f64,
    pub y: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    rcont: [Vec<f64>; 5],
    s_old: f64,
    h_old: f64,
    steps: usize,
    fsal_valid: bool,
}

impl<'a, S: System> Dopri5<'a, S> {
    pub fn new(sys: &'a S, s0: f64, y0: &[f64], h0: f64, tol: Tolerances) -> Self {
        let n = sys.dim();
        assert_eq!(y0.len(), n, "state length mismatch");
        let z = || vec![0.0; n];
        Dopri5 {
            sys,
            tol,
            s: s0,
            y: y0.to_vec(),
            h: h0.min(tol.h_max).max(tol.h_min),
            k: [z(), z(), z(), z(), z(), z(), z()],
            ytmp: z(),
            ynew: z(),
            rcont: [z(), z(), z(), z(), z()],
            s_old: s0,
            h_old: 0.0,
            steps: 0,
            fsal_valid: false,
        }
    }

    /// Start of the last accepted step.
    pub fn step_start(&self) -> f64 {
        self.s_old
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Caps the next trial step (used to land on window bounds gently).
    pub fn limit_next_step(&mut self, h: f64) {
        if h > 0.0 {
            self.h = self.h.min(h).max(self.tol.h_min);
        }
    }

    /// Discards cached derivatives after the state was edited externally.
    pub fn reset_state(&mut self, s: f64, y: &[f64]) {
        self.s = s;
        self.y.copy_from_slice(y);
        self.fsal_valid = false;
    }

    /// Advances by one accepted step.
    pub fn advance(&mut self) -> Result<(), OdeError> {
        let n = self.y.len();
        if !self.fsal_valid {
            self.sys.rhs(self.s, &self.y, &mut self.k[0]);
            self.fsal_valid = true;
        }
        loop {
            if self.steps >= self.tol.max_steps {
                return Err(OdeError::Budget(self.tol.max_steps));
            }
            let h = self.h;
            let s = self.s;
            let y = &self.y;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            for i in 0..n {
                self.ytmp[i] = y[i] + h * A21 * k1[i];
            }
            self.sys.rhs(s + C2 * h, &self.ytmp, k2);
            for i in 0..n {
                self.ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            self.sys.rhs(s + C3 * h, &self.ytmp, k3);
            for i in 0..n {
                self.ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            self.sys.rhs(s + C4 * h, &self.ytmp, k4);
            for i in 0..n {
                self.ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            self.sys.rhs(s + C5 * h, &self.ytmp, k5);
            for i in 0..n {
                self.ytmp[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            self.sys.rhs(s + h, &self.ytmp, k6);
            for i in 0..n {
                self.ynew[i] = y[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            self.sys.rhs(s + h, &self.ynew, k7);
            let mut err = 0.0;
            let mut finite = true;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(self.ynew[i].abs());
                err += (e / sc) * (e / sc);
                finite &= self.ynew[i].is_finite();
            }
            err = (err / n as f64).sqrt();
            if !finite || !err.is_finite() {
                let hn = 0.1 * h;
                if hn < self.tol.h_min {
                    return Err(OdeError::NonFinite { s });
                }
                self.h = hn;
                continue;
            }
            self.steps += 1;
            if err <= 1.0 {
                for i in 0..n {
                    let ydiff = self.ynew[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    self.rcont[0][i] = y[i];
                    self.rcont[1][i] = ydiff;
                    self.rcont[2][i] = bspl;
                    self.rcont[3][i] = ydiff - h * k7[i] - bspl;
                    self.rcont[4][i] = h
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                }
                self.s_old = s;
                self.h_old = h;
                self.s = s + h;
                self.y.copy_from_slice(&self.ynew);
                let (first, rest) = self.k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                self.h = (h * fac).min(self.tol.h_max);
                return Ok(());
            }
            let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            let hn = h * fac;
            if hn < self.tol.h_min {
                return Err(OdeError::StepUnderflow { s, h: hn });
            }
            self.h = hn;
        }
    }

    /// Dense output inside the last accepted step.
    pub fn dense(&self, s: f64, out: &mut [f64]) {
        let th = if self.h_old > 0.0 {
            (s - self.s_old) / self.h_old
        } else {
            0.0
        };
        let th1 = 1.0 - th;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.rcont[0][i]
                + th * (self.rcont[1][i]
                    + th1 * (self.rcont[2][i] + th * (self.rcont[3][i] + th1 * self.rcont[4][i])));
        }
    }
}

/// Bisection on a scalar function of the dense output.
///
/// `a` and `b` must bracket a sign change with `f(a) > 0 ≥ f(b)`. Returns the
/// parameter with the smaller |f| after at most `iters` halvings.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..iters {
        let m = 0.5 * (a + b);
        if m <= a.min(b) || m >= a.max(b) {
            break;
        }
        let fm = f(m);
        if fm > 0.0 {
            a = m;
            fa = fm;
        } else {
            b = m;
            fb = fm;
        }
    }
    if fa.abs() <= fb.abs() {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Osc;
    impl System for Osc {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _s: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    #[test]
    fn harmonic_oscillator_accuracy_and_dense_output() {
        let tol = Tolerances::default();
        let mut it = Dopri5::new(&Osc, 0.0, &[0.0, 1.0], 0.01, tol);
        let mut worst: f64 = 0.0;
        let mut buf = [0.0; 2];
        while it.s < 10.0 {
            it.advance().unwrap();
            let (a, b) = (it.step_start(), it.s);
            for j in 0..=4 {
                let s = a + (b - a) * j as f64 / 4.0;
                it.dense(s, &mut buf);
                worst = worst.max((buf[0] - s.sin()).abs());
            }
        }
        assert!(worst < 1e-8, "dense error {worst:e}");
    }

    #[test]
    fn bisection_finds_root() {
        let r = bisect(|s| 1.0 - s * s, 0.0, 3.0, 200);
        assert!((r - 1.0).abs() < 1e-15);
    }
}
