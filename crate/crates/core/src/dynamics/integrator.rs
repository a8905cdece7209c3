//! Dormand–Prince 5(4) with per-step error control and the standard
//! fourth-order continuous extension.

use serde::{Deserialize, Serialize};

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

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Absolute and relative accuracy requested from the integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { abs: 1e-10, rel: 1e-9 }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance { abs, rel }
    }

    pub fn is_valid(&self) -> bool {
        self.abs > 0.0 && self.rel > 0.0 && self.abs.is_finite() && self.rel.is_finite()
    }
}

/// How the absolute part of the tolerance is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorScale {
    /// `abs` is used as given.
    Absolute,
    /// `abs` is multiplied by the max-norm of the contiguous block of this
    /// size that contains the component. Keeps relative accuracy on
    /// solutions that decay toward zero.
    BlockNorm(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub tol: Tolerance,
    pub scale: ErrorScale,
    /// Leading components checked against `divergence_threshold`.
    pub monitored: usize,
    pub divergence_threshold: f64,
    pub max_steps: usize,
}

impl Options {
    pub fn new(tol: Tolerance, dim: usize) -> Self {
        Options {
            tol,
            scale: ErrorScale::Absolute,
            monitored: dim,
            divergence_threshold: 1e6,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Failure {
    Diverged { t: f64 },
    StepUnderflow { t: f64 },
}

/// One accepted step with its continuous extension.
pub struct DenseStep<'a> {
    pub t0: f64,
    pub h: f64,
    pub y0: &'a [f64],
    pub y1: &'a [f64],
    rcont: &'a [Vec<f64>; 5],
}

impl DenseStep<'_> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Interpolated state at `t` in `[t0, t0 + h]`.
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let [r1, r2, r3, r4, r5] = self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + s * (r2[i] + s1 * (r3[i] + s * (r4[i] + s1 * r5[i])));
        }
    }
}

/// Integrates an autonomous system `y' = f(y)` forward in time.
pub struct Stepper<'f> {
    rhs: &'f (dyn Fn(&[f64], &mut [f64]) + Sync),
    opts: Options,
    t: f64,
    y: Vec<f64>,
    h: f64,
    steps: usize,
    k: [Vec<f64>; 7],
    y_new: Vec<f64>,
    tmp: Vec<f64>,
    err: Vec<f64>,
    rcont: [Vec<f64>; 5],
}

impl<'f> Stepper<'f> {
    pub fn new(rhs: &'f (dyn Fn(&[f64], &mut [f64]) + Sync), y0: &[f64], opts: Options) -> Self {
        let n = y0.len();
        let z = || vec![0.0; n];
        let mut k = [z(), z(), z(), z(), z(), z(), z()];
        rhs(y0, &mut k[0]);
        Stepper {
            rhs,
            opts,
            t: 0.0,
            y: y0.to_vec(),
            h: 0.0,
            steps: 0,
            k,
            y_new: z(),
            tmp: z(),
            err: z(),
            rcont: [z(), z(), z(), z(), z()],
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &[f64] {
        &self.y
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn diverged(&self, y: &[f64]) -> bool {
        let m = &y[..self.opts.monitored.min(y.len())];
        if y.iter().any(|v| !v.is_finite()) {
            return true;
        }
        m.iter().map(|v| v * v).sum::<f64>().sqrt() > self.opts.divergence_threshold
    }

    /// Weighted RMS norm of `v` against the scale of `y0` and `y1`.
    fn error_norm(&self, v: &[f64], y0: &[f64], y1: &[f64]) -> f64 {
        let n = v.len();
        let tol = self.opts.tol;
        let block = match self.opts.scale {
            ErrorScale::Absolute => 0,
            ErrorScale::BlockNorm(b) => b.max(1),
        };
        let mut acc = 0.0;
        let mut block_norm = 1.0;
        for i in 0..n {
            if block > 0 && i % block == 0 {
                let end = (i + block).min(n);
                block_norm = (i..end).map(|j| y0[j].abs().max(y1[j].abs())).fold(0.0, f64::max);
            }
            let sc = tol.abs * block_norm + tol.rel * y0[i].abs().max(y1[i].abs());
            if v[i] == 0.0 {
                continue;
            }
            if sc == 0.0 {
                return f64::INFINITY;
            }
            let r = v[i] / sc;
            acc += r * r;
        }
        (acc / n as f64).sqrt()
    }

    fn initial_step(&mut self, span: f64) -> f64 {
        let n = self.y.len();
        let d0 = self.error_norm(&self.y, &self.y, &self.y);
        let d1 = self.error_norm(&self.k[0], &self.y, &self.y);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 || !d1.is_finite() {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(span);
        for i in 0..n {
            self.tmp[i] = self.y[i] + h0 * self.k[0][i];
        }
        (self.rhs)(&self.tmp, &mut self.k[1]);
        for i in 0..n {
            self.err[i] = (self.k[1][i] - self.k[0][i]) / h0;
        }
        let d2 = self.error_norm(&self.err, &self.y, &self.y);
        let dm = d1.max(d2);
        let h1 = if dm <= 1e-15 || !dm.is_finite() {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dm).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span)
    }

    /// Advances to `t_end`, calling `on_step` after every accepted step.
    pub fn advance(&mut self, t_end: f64, mut on_step: impl FnMut(&DenseStep<'_>)) -> Result<(), Failure> {
        let n = self.y.len();
        if t_end <= self.t {
            return Ok(());
        }
        if self.h <= 0.0 {
            self.h = self.initial_step(t_end - self.t);
        }
        let rhs = self.rhs;
        let mut last_rejected = false;
        while self.t < t_end {
            if self.steps >= self.opts.max_steps {
                return Err(Failure::StepUnderflow { t: self.t });
            }
            let remaining = t_end - self.t;
            let final_step = self.h >= remaining * (1.0 - 1e-12);
            let h = if final_step { remaining } else { self.h };
            if h < 1e-14 * self.t.abs().max(1.0) {
                return Err(Failure::StepUnderflow { t: self.t });
            }

            let y = &self.y;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let tmp = &mut self.tmp;
            for i in 0..n {
                tmp[i] = y[i] + h * A21 * k1[i];
            }
            rhs(tmp, k2);
            for i in 0..n {
                tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            rhs(tmp, k3);
            for i in 0..n {
                tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            rhs(tmp, k4);
            for i in 0..n {
                tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            rhs(tmp, k5);
            for i in 0..n {
                tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            rhs(tmp, k6);
            let y_new = &mut self.y_new;
            for i in 0..n {
                y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            rhs(y_new, k7);
            for i in 0..n {
                self.err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            }
            self.steps += 1;

            let err = self.error_norm(&self.err, &self.y, &self.y_new);
            if !err.is_finite() && self.diverged(&self.y_new) {
                return Err(Failure::Diverged { t: self.t });
            }

            if err <= 1.0 {
                {
                    let [k1, _, k3, k4, k5, k6, k7] = &self.k;
                    let [r1, r2, r3, r4, r5] = &mut self.rcont;
                    for i in 0..n {
                        let dy = self.y_new[i] - self.y[i];
                        let bspl = h * k1[i] - dy;
                        r1[i] = self.y[i];
                        r2[i] = dy;
                        r3[i] = bspl;
                        r4[i] = dy - h * k7[i] - bspl;
                        r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                    }
                }
                let t0 = self.t;
                self.t = if final_step { t_end } else { self.t + h };
                on_step(&DenseStep {
                    t0,
                    h,
                    y0: &self.y,
                    y1: &self.y_new,
                    rcont: &self.rcont,
                });
                std::mem::swap(&mut self.y, &mut self.y_new);
                self.k.swap(0, 6);
                if self.diverged(&self.y) {
                    return Err(Failure::Diverged { t: self.t });
                }

                let mut fac = if err == 0.0 {
                    FAC_MAX
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
                };
                if last_rejected {
                    fac = fac.min(1.0);
                }
                last_rejected = false;
                // Keep the proposed step when the final step was shortened to land on t_end.
                if !final_step || h >= self.h {
                    self.h = h * fac;
                }
            } else {
                let fac = if err.is_finite() {
                    (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0)
                } else {
                    FAC_MIN
                };
                self.h = h * fac;
                last_rejected = true;
            }
        }
        Ok(())
    }
}
