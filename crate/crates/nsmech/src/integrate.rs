//! Explicit Runge-Kutta steppers on second-order states `(q, q̇)`.
//!
//! The simulator integrates smooth arcs between contact events, so the
//! steppers here know nothing about constraints beyond the acceleration
//! callback they are handed. Two methods are provided: classic fixed-step
//! RK4 (also used as the probe integrator during event bisection) and
//! Fehlberg's embedded 4(5) pair with proportional step control.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Acceleration callback `(t, q, q̇) → q̈`.
pub type AccelFn<'a> = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Rkf45,
}

/// Stepper configuration. `step_size` is the fixed step for RK4 and the
/// initial/maximum step for RKF45; the tolerances only drive RKF45.
#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    pub method: Method,
    pub step_size: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator { method: Method::Rk4, step_size: 1e-3, rel_tol: 1e-8, abs_tol: 1e-10 }
    }
}

/// Result of one accepted step.
pub struct StepResult {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    /// Step actually taken.
    pub h: f64,
    /// Suggested size for the next step.
    pub h_next: f64,
}

/// One classic RK4 step of size `h`.
pub fn rk4_step(
    accel: &AccelFn,
    t: f64,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    h: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let k1q = qdot.clone();
    let k1v = accel(t, q, qdot)?;

    let q2 = q + &k1q * (h / 2.0);
    let v2 = qdot + &k1v * (h / 2.0);
    let k2q = v2.clone();
    let k2v = accel(t + h / 2.0, &q2, &v2)?;

    let q3 = q + &k2q * (h / 2.0);
    let v3 = qdot + &k2v * (h / 2.0);
    let k3q = v3.clone();
    let k3v = accel(t + h / 2.0, &q3, &v3)?;

    let q4 = q + &k3q * h;
    let v4 = qdot + &k3v * h;
    let k4q = v4.clone();
    let k4v = accel(t + h, &q4, &v4)?;

    let qn = q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
    let vn = qdot + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
    Ok((qn, vn))
}

// Fehlberg 4(5) tableau.
const A: [[f64; 5]; 5] = [
    [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
const C: [f64; 6] = [0.0, 1.0 / 4.0, 3.0 / 8.0, 12.0 / 13.0, 1.0, 1.0 / 2.0];
const B5: [f64; 6] =
    [16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0];
const B4: [f64; 6] =
    [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0, 0.0];

/// One Fehlberg 4(5) attempt of size `h`. Returns the fifth-order update
/// and the scaled error estimate (acceptable when at most one).
fn rkf45_attempt(
    accel: &AccelFn,
    t: f64,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    let n = q.len();
    let mut kq: Vec<DVector<f64>> = Vec::with_capacity(6);
    let mut kv: Vec<DVector<f64>> = Vec::with_capacity(6);
    kq.push(qdot.clone());
    kv.push(accel(t, q, qdot)?);
    for s in 1..6 {
        let mut qs = q.clone();
        let mut vs = qdot.clone();
        for j in 0..s {
            let a = A[s - 1][j];
            if a != 0.0 {
                qs += &kq[j] * (h * a);
                vs += &kv[j] * (h * a);
            }
        }
        kq.push(vs.clone());
        kv.push(accel(t + C[s] * h, &qs, &vs)?);
    }

    let mut q5 = q.clone();
    let mut v5 = qdot.clone();
    let mut q4 = q.clone();
    let mut v4 = qdot.clone();
    for s in 0..6 {
        q5 += &kq[s] * (h * B5[s]);
        v5 += &kv[s] * (h * B5[s]);
        q4 += &kq[s] * (h * B4[s]);
        v4 += &kv[s] * (h * B4[s]);
    }

    let mut err: f64 = 0.0;
    for i in 0..n {
        let scale_q = abs_tol + rel_tol * q[i].abs().max(q5[i].abs());
        let scale_v = abs_tol + rel_tol * qdot[i].abs().max(v5[i].abs());
        err = err.max((q4[i] - q5[i]).abs() / scale_q);
        err = err.max((v4[i] - v5[i]).abs() / scale_v);
    }
    Ok((q5, v5, err))
}

impl Integrator {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::config("integrator.step_size", "must be positive"));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0)
            || !(self.abs_tol.is_finite() && self.abs_tol > 0.0)
        {
            return Err(Error::config("integrator.rel_tol", "tolerances must be positive"));
        }
        Ok(())
    }

    /// Advances by at most `h_max`. `h_hint` carries the adaptive step
    /// suggestion between calls (use `step_size` initially); `h_min` bounds
    /// shrinkage before the stepper gives up.
    pub fn step(
        &self,
        accel: &AccelFn,
        t: f64,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        h_max: f64,
        h_hint: f64,
        h_min: f64,
    ) -> Result<StepResult> {
        match self.method {
            Method::Rk4 => {
                let h = self.step_size.min(h_max);
                let (qn, vn) = rk4_step(accel, t, q, qdot, h)?;
                Ok(StepResult { q: qn, qdot: vn, h, h_next: self.step_size })
            }
            Method::Rkf45 => {
                let mut h = h_hint.min(h_max).min(self.step_size);
                for _ in 0..40 {
                    let (qn, vn, err) =
                        rkf45_attempt(accel, t, q, qdot, h, self.rel_tol, self.abs_tol)?;
                    // Proportional controller with growth/shrink clamps.
                    let factor = if err > 0.0 {
                        (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                    } else {
                        5.0
                    };
                    if err <= 1.0 {
                        let h_next = (h * factor).min(self.step_size);
                        return Ok(StepResult { q: qn, qdot: vn, h, h_next });
                    }
                    h *= factor;
                    if h < h_min {
                        return Err(Error::Stalled {
                            t,
                            message: format!("adaptive step collapsed below {h_min:.3e}"),
                            dump: String::new(),
                        });
                    }
                }
                Err(Error::Stalled {
                    t,
                    message: "no acceptable step after 40 attempts".into(),
                    dump: String::new(),
                })
            }
        }
    }
}
