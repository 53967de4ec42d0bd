//! Exponential relaxation-rate fits.

use serde::{Deserialize, Serialize};

use crate::equilibrium::beta_model1;
use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFitOptions {
    /// Accuracy of the series; the window stops at `floor_factor * tol`.
    pub tol: f64,
    pub floor_factor: f64,
    /// The window starts once the gap is below this fraction of the initial gap.
    pub start_fraction: f64,
    /// Power `p` of an algebraic prefactor `t^{-p}` removed before the fit.
    pub prefactor_power: f64,
}

impl Default for RateFitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            floor_factor: 1e3,
            start_fraction: 0.1,
            prefactor_power: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub v_hat: f64,
    pub v_theory: Option<f64>,
    pub window: (f64, f64),
    pub r2: f64,
    pub points: usize,
    pub prefactor_power: f64,
}

impl RateEstimate {
    pub fn with_theory(mut self, params: &ModelParams) -> Self {
        self.v_theory = Some(v_theory(params));
        self
    }

    /// `|v_hat / v_theory - 1|`, if a theoretical rate is attached.
    pub fn relative_error(&self) -> Option<f64> {
        self.v_theory.map(|v| (self.v_hat / v - 1.0).abs())
    }
}

/// Lower bound `min(mu, lambda (1 - sqrt(beta))^2)` on the relaxation rate of the
/// unbounded model; equal to `min(mu, (sqrt(lambda) - sqrt(delta_bar))^2)`.
pub fn v_theory(params: &ModelParams) -> f64 {
    let beta = beta_model1(params);
    let a = params.lambda * (1.0 - beta.sqrt()).powi(2);
    let b = (params.lambda.sqrt() - (params.lambda * beta).sqrt()).powi(2);
    debug_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    params.mu.min(a)
}

/// Least-squares fit of `log |series - limit| + p log t = c - v t` over the window
/// where the gap has left the initial transient but is still well above `tol`.
pub fn estimate_rate(
    times: &[f64],
    series: &[f64],
    limit: f64,
    opts: &RateFitOptions,
) -> Result<RateEstimate> {
    if times.len() != series.len() {
        return Err(Error::param("series", "times and values differ in length"));
    }
    let gap: Vec<f64> = series.iter().map(|s| (s - limit).abs()).collect();
    let g0 = gap.first().copied().unwrap_or(0.0);
    let g0 = if g0 > 0.0 {
        g0
    } else {
        gap.iter().copied().fold(0.0, f64::max)
    };
    let upper = opts.start_fraction * g0;
    let lower = opts.floor_factor * opts.tol;
    let start = gap.iter().position(|g| *g <= upper);
    let (i1, i2) = match start {
        Some(i1) if gap[i1] >= lower => {
            let len = gap[i1..].iter().take_while(|g| **g >= lower).count();
            (i1, i1 + len)
        }
        _ => {
            return Err(Error::EmptyWindow(format!(
                "no samples between {lower:e} and {upper:e}"
            )))
        }
    };
    if i2 - i1 < 5 {
        return Err(Error::EmptyWindow(format!(
            "only {} samples in the fit window",
            i2 - i1
        )));
    }
    let p = opts.prefactor_power;
    let xs = &times[i1..i2];
    if p != 0.0 && xs[0] <= 0.0 {
        return Err(Error::EmptyWindow(
            "prefactor correction needs t > 0".into(),
        ));
    }
    let ys: Vec<f64> = gap[i1..i2]
        .iter()
        .zip(xs)
        .map(|(g, t)| g.ln() + p * t.ln())
        .collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(RateEstimate {
        v_hat: -slope,
        v_theory: None,
        window: (xs[0], xs[xs.len() - 1]),
        r2,
        points: xs.len(),
        prefactor_power: p,
    })
}
