//! The coupled rate equation `delta' + mu delta = lambda mu (1 - H)` and its two
//! monotone fixed-point iterations.
//!
//! `solve_delta_system` marches rate and emptiness probability together, settling
//! a scalar fixed point at each step. The global iterations start from `0`
//! (increasing) or from a constant `gamma0` (decreasing) and alternate a full
//! Volterra solve with the integrating-factor form of the rate equation.

use log::debug;
use serde::{Deserialize, Serialize};

use super::volterra::{
    march, points, solve_h_with, Coupling, Gregory, QueueInit, RateFunction, VolterraOptions,
    VolterraSolution, DEFAULT_ORDER,
};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelParams};

const REFINE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeOptions {
    pub max_iterations: usize,
    /// Stop once successive iterates are this close in sup norm.
    pub tol: f64,
    /// Round-off allowance when checking monotonicity between iterates.
    pub monotone_slack: f64,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tol: 1e-12,
            monotone_slack: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRun {
    pub iterates: Vec<RateFunction>,
    pub converged: bool,
}

impl SchemeRun {
    pub fn limit(&self) -> &RateFunction {
        self.iterates.last().expect("at least the starting iterate")
    }
}

fn check_params(params: &ModelParams, horizon: f64, step: f64) -> Result<()> {
    params.validate()?;
    if params.model != ModelKind::ReservationInfinite {
        return Err(Error::param(
            "model",
            "the rate system belongs to the unbounded reservation model",
        ));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::param(
            "horizon",
            format!("must be non-negative, got {horizon}"),
        ));
    }
    if !(step > 0.0) {
        return Err(Error::param("h", format!("must be positive, got {step}")));
    }
    Ok(())
}

/// Default step `min(0.01, 0.1 / lambda, 0.1 / mu)`.
pub fn default_step(params: &ModelParams) -> f64 {
    0.01f64.min(0.1 / params.lambda).min(0.1 / params.mu)
}

/// Solves the coupled system from an empty reservation queue and the given car law.
///
/// Returns the rate and the emptiness probability on `0, h, ..., horizon`. The
/// a-priori bound `delta(t) <= lambda (1 - e^{-mu t})` is checked at every point.
pub fn solve_delta_system(
    params: &ModelParams,
    init: &QueueInit,
    horizon: f64,
    h: f64,
) -> Result<(RateFunction, VolterraSolution)> {
    solve_delta_system_with(params, init, horizon, h, &VolterraOptions::default())
}

pub fn solve_delta_system_with(
    params: &ModelParams,
    init: &QueueInit,
    horizon: f64,
    h: f64,
    opts: &VolterraOptions,
) -> Result<(RateFunction, VolterraSolution)> {
    check_params(params, horizon, h)?;
    init.validate()?;
    if (init.mean() - params.fleet_density).abs() > 1e-9 {
        debug!(
            "initial car mean {} differs from U = {}; the limit will not be lambda * beta(U)",
            init.mean(),
            params.fleet_density
        );
    }
    let (lambda, mu) = (params.lambda, params.mu);
    let n = points(horizon, h);
    let coupling = Coupling::Coupled { mu };
    let mut sol = march(lambda, h, n, init, &coupling, opts.order)?;
    for d in sol.delta.iter_mut() {
        if *d < 0.0 {
            // start-up round-off around an empty system
            debug_assert!(*d > -1e-9);
            *d = 0.0;
        }
    }

    for (i, d) in sol.delta.iter().enumerate() {
        let t = i as f64 * h;
        let bound = lambda * (1.0 - (-mu * t).exp());
        if *d > bound + 1e-12 {
            return Err(Error::InvalidState(format!(
                "rate {d} exceeds its a-priori bound {bound} at t = {t}"
            )));
        }
    }

    let mut defect = 0.0;
    if opts.estimate_defect && n >= 3 {
        let fine = march(lambda, h / 2.0, 2 * n - 1, init, &coupling, opts.order)?;
        for (i, (d, hv)) in sol.delta.iter().zip(&sol.h).enumerate() {
            defect = f64::max(defect, (d - fine.delta[2 * i]).abs());
            defect = f64::max(defect, (hv - fine.h[2 * i]).abs());
        }
        if defect > opts.defect_threshold {
            return Err(Error::GridTooCoarse {
                defect,
                threshold: opts.defect_threshold,
            });
        }
    }
    let rate = RateFunction::new(h, sol.delta)?;
    Ok((
        rate,
        VolterraSolution {
            step: h,
            h: sol.h,
            psi: sol.psi,
            defect,
        },
    ))
}

/// `lambda mu int_0^t e^{-mu (t - s)} (1 - H(s)) ds` on the grid of `hv`.
///
/// The first few points are integrated on a refined grid through a polynomial
/// interpolant, matching the start-up of the march.
fn rate_from_emptiness(lambda: f64, mu: f64, hv: &[f64], step: f64) -> Vec<f64> {
    let rule = Gregory::new(DEFAULT_ORDER);
    let n = hv.len();
    let head = DEFAULT_ORDER.min(n.saturating_sub(1));
    let mut out = vec![0.0; n];
    if head > 0 {
        let nodes = DEFAULT_ORDER.min(n - 1);
        let fine_step = step / REFINE as f64;
        let idle: Vec<f64> = (0..=head * REFINE)
            .map(|k| 1.0 - lagrange(&hv[..=nodes], step, k as f64 * fine_step))
            .collect();
        for (i, o) in out.iter_mut().enumerate().take(head + 1).skip(1) {
            let nf = i * REFINE;
            let w = rule.weights(nf);
            let ti = nf as f64 * fine_step;
            let s: f64 = (0..=nf)
                .map(|k| w[k] * (-mu * (ti - k as f64 * fine_step)).exp() * idle[k])
                .sum();
            *o = lambda * mu * fine_step * s;
        }
    }
    for (i, o) in out.iter_mut().enumerate().skip(head + 1) {
        let w = rule.weights(i);
        let s: f64 = (0..=i)
            .map(|j| w[j] * (-mu * (i - j) as f64 * step).exp() * (1.0 - hv[j]))
            .sum();
        *o = lambda * mu * step * s;
    }
    out
}

fn lagrange(y: &[f64], step: f64, t: f64) -> f64 {
    let n = y.len();
    (0..n)
        .map(|i| {
            let l: f64 = (0..n)
                .filter(|j| *j != i)
                .map(|j| (t - j as f64 * step) / ((i as f64 - j as f64) * step))
                .product();
            l * y[i]
        })
        .sum()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Up,
    Down,
}

fn iterate(
    params: &ModelParams,
    init: &QueueInit,
    start: RateFunction,
    dir: Direction,
    opts: &SchemeOptions,
) -> Result<SchemeRun> {
    let (lambda, mu) = (params.lambda, params.mu);
    let vopts = VolterraOptions {
        estimate_defect: false,
        ..Default::default()
    };
    let step = start.step;
    let mut iterates = vec![start];
    for n in 0..opts.max_iterations {
        let cur = iterates.last().expect("non-empty");
        let hsol = solve_h_with(cur, lambda, init, &vopts)?;
        let next = RateFunction::new(
            step,
            rate_from_emptiness(lambda, mu, &hsol.h, step)
                .into_iter()
                .map(|v| v.max(0.0))
                .collect(),
        )?;
        for (i, (a, b)) in cur.values.iter().zip(&next.values).enumerate() {
            let broken = match dir {
                Direction::Up => *b < a - opts.monotone_slack,
                Direction::Down => *b > a + opts.monotone_slack,
            };
            if broken {
                return Err(Error::Monotonicity {
                    iterate: n + 1,
                    t: i as f64 * step,
                    detail: format!("iterate moved from {a} to {b}"),
                });
            }
        }
        let change = cur.sup_distance(&next);
        iterates.push(next);
        if change < opts.tol {
            return Ok(SchemeRun {
                iterates,
                converged: true,
            });
        }
    }
    Ok(SchemeRun {
        iterates,
        converged: false,
    })
}

/// Increasing iteration from `delta_0 = 0`.
pub fn lower_scheme(
    params: &ModelParams,
    init: &QueueInit,
    horizon: f64,
    h: f64,
    opts: &SchemeOptions,
) -> Result<SchemeRun> {
    check_params(params, horizon, h)?;
    iterate(
        params,
        init,
        RateFunction::constant(0.0, h, horizon)?,
        Direction::Up,
        opts,
    )
}

/// Decreasing iteration from the constant `gamma0`.
///
/// `gamma0` must dominate the rate: the first iterate must lie below it. For a
/// geometric car law with ratio `q`, any `gamma0 >= lambda q` does.
pub fn upper_scheme(
    params: &ModelParams,
    init: &QueueInit,
    gamma0: f64,
    horizon: f64,
    h: f64,
    opts: &SchemeOptions,
) -> Result<SchemeRun> {
    check_params(params, horizon, h)?;
    if !(gamma0 > 0.0 && gamma0 < params.lambda) {
        return Err(Error::param(
            "gamma0",
            format!("must lie in (0, lambda), got {gamma0}"),
        ));
    }
    iterate(
        params,
        init,
        RateFunction::constant(gamma0, h, horizon)?,
        Direction::Down,
        opts,
    )
}
