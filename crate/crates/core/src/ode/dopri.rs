//! Dormand–Prince 5(4) with PI step-size control.
//!
//! Steps are clamped so that every requested output time is hit exactly; the
//! observer may then modify the state in place (renormalization, clipping).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopriOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for DopriOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
        }
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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = f(t, y)` from `t0`, calling `observe(i, t_out[i], y)` at each
/// output time. Output times must be non-decreasing and `>= t0`.
pub fn integrate<F, O>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_out: &[f64],
    opts: &DopriOptions,
    mut observe: O,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(usize, f64, &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];

    f(t, &y, &mut k1);
    let mut h = opts.h_init.unwrap_or_else(|| initial_step(&y, &k1, opts));
    let mut err_prev: f64 = 1e-4;
    let mut steps = 0usize;
    let mut fsal_valid = true;

    for (i, &target) in t_out.iter().enumerate() {
        if target < t {
            return Err(Error::InvalidState(format!(
                "output time {target} precedes {t}"
            )));
        }
        while t < target {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::NoConvergence {
                    iterations: steps,
                    detail: format!("step budget exhausted at t = {t}"),
                });
            }
            if !fsal_valid {
                f(t, &y, &mut k1);
                fsal_valid = true;
            }
            h = h.min(opts.h_max);
            let last = t + h >= target;
            let hs = if last { target - t } else { h };
            if hs <= 1e-14 * t.abs().max(1.0) && !last {
                return Err(Error::StepUnderflow { t });
            }

            for m in 0..n {
                tmp[m] = y[m] + hs * A21 * k1[m];
            }
            f(t + C2 * hs, &tmp, &mut k2);
            for m in 0..n {
                tmp[m] = y[m] + hs * (A31 * k1[m] + A32 * k2[m]);
            }
            f(t + C3 * hs, &tmp, &mut k3);
            for m in 0..n {
                tmp[m] = y[m] + hs * (A41 * k1[m] + A42 * k2[m] + A43 * k3[m]);
            }
            f(t + C4 * hs, &tmp, &mut k4);
            for m in 0..n {
                tmp[m] = y[m] + hs * (A51 * k1[m] + A52 * k2[m] + A53 * k3[m] + A54 * k4[m]);
            }
            f(t + C5 * hs, &tmp, &mut k5);
            for m in 0..n {
                tmp[m] = y[m]
                    + hs * (A61 * k1[m] + A62 * k2[m] + A63 * k3[m] + A64 * k4[m] + A65 * k5[m]);
            }
            f(t + hs, &tmp, &mut k6);
            for m in 0..n {
                y_new[m] =
                    y[m] + hs * (B1 * k1[m] + B3 * k3[m] + B4 * k4[m] + B5 * k5[m] + B6 * k6[m]);
            }
            f(t + hs, &y_new, &mut k7);

            let mut err = 0.0;
            for m in 0..n {
                let e = hs
                    * (E1 * k1[m] + E3 * k3[m] + E4 * k4[m] + E5 * k5[m] + E6 * k6[m] + E7 * k7[m]);
                let sc = opts.abs_tol + opts.rel_tol * y[m].abs().max(y_new[m].abs());
                err += (e / sc).powi(2);
            }
            let err = if n == 0 { 0.0 } else { (err / n as f64).sqrt() };

            if err <= 1.0 {
                t = if last { target } else { t + hs };
                std::mem::swap(&mut y, &mut y_new);
                std::mem::swap(&mut k1, &mut k7);
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0)).clamp(0.2, 5.0)
                };
                err_prev = err.max(1e-4);
                // a clamped final step says nothing about the natural step size
                if !last || hs >= h {
                    h = hs * fac;
                }
            } else {
                let fac = if err.is_finite() {
                    (0.9 * err.powf(-0.2)).clamp(0.1, 1.0)
                } else {
                    0.1
                };
                h = hs * fac;
                if h <= 1e-14 * t.abs().max(1.0) {
                    return Err(Error::StepUnderflow { t });
                }
            }
        }
        let before = y.clone();
        observe(i, t, &mut y)?;
        if y != before {
            fsal_valid = false;
        }
    }
    Ok(y)
}

fn initial_step(y: &[f64], dy: &[f64], opts: &DopriOptions) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (a, b) in y.iter().zip(dy) {
        let sc = opts.abs_tol + opts.rel_tol * a.abs();
        d0 += (a / sc).powi(2);
        d1 += (b / sc).powi(2);
    }
    let h = if d0 < 1e-10 || d1 < 1e-10 {
        1e-6
    } else {
        0.01 * (d0 / d1).sqrt()
    };
    h.min(opts.h_max).max(1e-10)
}
