//! Emptiness probability of the car queue as a Volterra equation of the second kind.
//!
//! The car queue of a station is an M(t)/M/1 queue fed at rate `delta(t)` and
//! served at rate `lambda`. Its emptiness probability solves
//! `H(t) = psi(t) + lambda * int_0^t D(s, t) H(s) ds`, where the kernel satisfies
//! `lambda * int_0^inf D = 1`. That makes the renewal critical: quadrature errors
//! accumulate linearly in the horizon rather than being damped. The march therefore
//! uses high-order Gregory end corrections, and its first few steps are taken
//! on a much finer grid.

use serde::{Deserialize, Serialize};

use super::bessel::{i0e, i1e};
use crate::error::{Error, Result};

/// Gregory coefficients: `1/12, 1/24, 19/720, ...`.
const GREGORY: [f64; 7] = [
    1.0 / 12.0,
    1.0 / 24.0,
    19.0 / 720.0,
    3.0 / 160.0,
    863.0 / 60480.0,
    275.0 / 24192.0,
    33953.0 / 3628800.0,
];

/// Uniformly sampled non-negative rate `delta(t_i)`, `t_i = i * step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFunction {
    pub step: f64,
    pub values: Vec<f64>,
}

impl RateFunction {
    pub fn new(step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::param(
                "step",
                format!("must be positive, got {step}"),
            ));
        }
        if values.is_empty() {
            return Err(Error::param("values", "need at least one sample"));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::param(
                "values",
                format!("rates must be finite and non-negative, got {v}"),
            ));
        }
        Ok(Self { step, values })
    }

    pub fn constant(gamma: f64, step: f64, horizon: f64) -> Result<Self> {
        Self::new(step, vec![gamma; points(horizon, step)])
    }

    pub fn from_fn(step: f64, horizon: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            step,
            (0..points(horizon, step))
                .map(|i| f(i as f64 * step))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        (self.len() - 1) as f64 * self.step
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| i as f64 * self.step).collect()
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("non-empty")
    }

    /// `A_t = int_0^t delta` at every grid point.
    pub fn cumulative(&self) -> Vec<f64> {
        Gregory::new(DEFAULT_ORDER).cumulative(&self.values, self.step)
    }

    pub fn sup_distance(&self, other: &RateFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn points(horizon: f64, step: f64) -> usize {
    (horizon / step).round() as usize + 1
}

/// Law of the initial car count `N(0)` of the queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueInit {
    /// `P(N(0) = m)` for `m = 0..len`.
    Finite(Vec<f64>),
    /// `P(N(0) = m) = (1 - q) q^m`.
    Geometric { q: f64 },
}

impl QueueInit {
    pub fn empty() -> Self {
        QueueInit::Finite(vec![1.0])
    }

    pub fn point(m: usize) -> Self {
        let mut p = vec![0.0; m + 1];
        p[m] = 1.0;
        QueueInit::Finite(p)
    }

    /// Geometric law with the given mean.
    pub fn geometric_with_mean(mean: f64) -> Self {
        QueueInit::Geometric {
            q: mean / (1.0 + mean),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            QueueInit::Finite(p) => {
                if p.iter().any(|x| !(*x >= 0.0)) {
                    return Err(Error::param(
                        "initial_queue",
                        "probabilities must be non-negative",
                    ));
                }
                let s: f64 = p.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(Error::param("initial_queue", format!("sums to {s}, not 1")));
                }
                Ok(())
            }
            QueueInit::Geometric { q } if (0.0..1.0).contains(q) => Ok(()),
            QueueInit::Geometric { q } => Err(Error::param(
                "initial_queue",
                format!("geometric ratio must lie in [0, 1), got {q}"),
            )),
        }
    }

    pub fn prob_empty(&self) -> f64 {
        match self {
            QueueInit::Finite(p) => p.first().copied().unwrap_or(0.0),
            QueueInit::Geometric { q } => 1.0 - q,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            QueueInit::Finite(p) => p.iter().enumerate().map(|(m, x)| m as f64 * x).sum(),
            QueueInit::Geometric { q } => q / (1.0 - q),
        }
    }

    /// `(m, P(N(0) = m))` pairs with negligible tail dropped.
    fn atoms(&self) -> Vec<(usize, f64)> {
        match self {
            QueueInit::Finite(p) => p
                .iter()
                .copied()
                .enumerate()
                .filter(|(_, x)| *x > 0.0)
                .collect(),
            QueueInit::Geometric { q } => {
                let mut v = vec![];
                let mut pm = 1.0 - q;
                let mut m = 0;
                // tail beyond m is q^(m+1)
                while pm > 0.0 {
                    v.push((m, pm));
                    if pm * q / (1.0 - q) < 1e-17 || *q == 0.0 {
                        break;
                    }
                    pm *= q;
                    m += 1;
                }
                v
            }
        }
    }
}

/// `D(s, t)` for elapsed time `tau = t - s` and rate increment `da = A_t - A_s`.
#[inline]
pub(crate) fn kern(lambda: f64, tau: f64, da: f64) -> f64 {
    if tau <= 0.0 {
        return 1.0;
    }
    let lt = lambda * tau;
    if da <= 0.0 {
        return (-lt).exp();
    }
    let z = 2.0 * (lt * da).sqrt();
    let gap = lt.sqrt() - da.sqrt();
    (-gap * gap).exp() * (i0e(z) - (da / lt).sqrt() * i1e(z))
}

/// Kernel of the Volterra equation for a cumulative rate given as a function of time.
pub fn kernel_d(s: f64, t: f64, lambda: f64, cumulative: impl Fn(f64) -> f64) -> Result<f64> {
    if s > t {
        return Err(Error::param("s", format!("must not exceed t ({s} > {t})")));
    }
    Ok(kern(
        lambda,
        t - s,
        (cumulative(t) - cumulative(s)).max(0.0),
    ))
}

/// Forcing contribution of an initial queue of `m` cars, with `x = lambda t` and
/// `y = A_t`: `e^{-x-y} sum_b x^{m+b} y^b / ((m+b)! b!)`, summed outwards from
/// its largest term.
fn psi_atom(m: usize, x: f64, y: f64, ln_fact: &mut LnFact) -> f64 {
    if x == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    let mf = m as f64;
    if y == 0.0 {
        return (mf * x.ln() - ln_fact.get(m) - x).exp();
    }
    // the terms peak near b* solving (m + b + 1)(b + 1) = x y
    let xy = x * y;
    let disc = (mf * mf + 4.0 * xy).sqrt();
    let peak = (((disc - mf) / 2.0 - 1.0).max(0.0)).round() as usize;
    let ln_term = |b: usize, lf: &mut LnFact| {
        (m + b) as f64 * x.ln() + b as f64 * y.ln() - lf.get(m + b) - lf.get(b) - x - y
    };
    let base = ln_term(peak, ln_fact);
    let mut sum = 1.0;
    let mut term = 1.0;
    let mut b = peak;
    loop {
        term *= xy / (((m + b + 1) * (b + 1)) as f64);
        b += 1;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    term = 1.0;
    b = peak;
    while b > 0 {
        term *= ((m + b) * b) as f64 / xy;
        b -= 1;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    base.exp() * sum
}

struct LnFact(Vec<f64>);

impl LnFact {
    fn new() -> Self {
        LnFact(vec![0.0])
    }

    fn get(&mut self, n: usize) -> f64 {
        while self.0.len() <= n {
            let k = self.0.len();
            let prev = self.0[k - 1];
            self.0.push(prev + (k as f64).ln());
        }
        self.0[n]
    }
}

pub(crate) struct Forcing {
    atoms: Vec<(usize, f64)>,
    ln_fact: LnFact,
}

impl Forcing {
    pub(crate) fn new(init: &QueueInit) -> Result<Self> {
        init.validate()?;
        Ok(Self {
            atoms: init.atoms(),
            ln_fact: LnFact::new(),
        })
    }

    pub(crate) fn at(&mut self, lambda: f64, t: f64, cumulative: f64) -> f64 {
        let x = lambda * t;
        let y = cumulative.max(0.0);
        let mut s = 0.0;
        for &(m, p) in &self.atoms {
            s += p * psi_atom(m, x, y, &mut self.ln_fact);
        }
        s
    }
}

/// Forcing term `psi(t_i)` of the Volterra equation for the given initial queue law.
pub fn psi_forcing(
    init: &QueueInit,
    lambda: f64,
    cumulative: &[f64],
    t_grid: &[f64],
) -> Result<Vec<f64>> {
    if cumulative.len() != t_grid.len() {
        return Err(Error::param("cumulative", "must be sampled on t_grid"));
    }
    let mut f = Forcing::new(init)?;
    Ok(t_grid
        .iter()
        .zip(cumulative)
        .map(|(&t, &a)| f.at(lambda, t, a))
        .collect())
}

pub(crate) const DEFAULT_ORDER: usize = 6;
const REFINE: usize = 32;

/// Gregory quadrature: trapezoid plus `m` end corrections on each side.
pub(crate) struct Gregory {
    m: usize,
    // corr[mp][i] for mp = 0..=m, i = 0..=mp
    corr: Vec<Vec<f64>>,
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl Gregory {
    pub(crate) fn new(m: usize) -> Self {
        assert!(m <= GREGORY.len());
        let corr = (0..=m)
            .map(|mp| {
                (0..=mp)
                    .map(|i| {
                        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                        (i.max(1)..=mp)
                            .map(|k| GREGORY[k - 1] * sign * binom(k, i))
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Self { m, corr }
    }

    /// Unit-step weights for `int_0^n f` from samples `f_0..=f_n`.
    pub(crate) fn weights(&self, n: usize) -> Vec<f64> {
        if n == 0 {
            return vec![0.0];
        }
        let mut w = vec![1.0; n + 1];
        w[0] = 0.5;
        w[n] = 0.5;
        let c = &self.corr[self.m.min(n)];
        for (i, ci) in c.iter().enumerate() {
            w[i] -= ci;
            w[n - i] -= ci;
        }
        w
    }

    /// Running integrals `int_0^{t_i} f` for every `i`.
    pub(crate) fn cumulative(&self, f: &[f64], h: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(f.len());
        let mut trap = 0.0;
        for n in 0..f.len() {
            if n > 0 {
                trap += 0.5 * (f[n - 1] + f[n]);
            }
            let mut s = trap;
            if n > 0 {
                for (i, ci) in self.corr[self.m.min(n)].iter().enumerate() {
                    s -= ci * (f[i] + f[n - i]);
                }
            }
            out.push(h * s);
        }
        out
    }
}

/// Emptiness probability, its forcing, and a quadrature-error estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolterraSolution {
    pub step: f64,
    pub h: Vec<f64>,
    pub psi: Vec<f64>,
    /// Sup distance to the same solve on the halved step.
    pub defect: f64,
}

impl VolterraSolution {
    pub fn times(&self) -> Vec<f64> {
        (0..self.h.len()).map(|i| i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolterraOptions {
    /// Number of Gregory end corrections (0 gives the trapezoid rule).
    pub order: usize,
    /// Whether to re-solve on the halved step to estimate the error.
    pub estimate_defect: bool,
    pub defect_threshold: f64,
}

impl Default for VolterraOptions {
    fn default() -> Self {
        Self {
            order: DEFAULT_ORDER,
            estimate_defect: true,
            defect_threshold: 1e-5,
        }
    }
}

pub(crate) enum Coupling<'a> {
    /// The rate is prescribed on the march grid.
    Given(&'a [f64]),
    /// The rate is generated by the solution, `delta' + mu delta = lambda mu (1 - H)`.
    Coupled { mu: f64 },
}

pub(crate) struct Marched {
    pub delta: Vec<f64>,
    pub h: Vec<f64>,
    pub psi: Vec<f64>,
}

/// Marches the Volterra equation (and, if coupled, the rate equation) on `n`
/// points of step `step`. The first `order` steps come from a march on a grid
/// `REFINE` times finer, where the low-order start-up error is negligible.
pub(crate) fn march(
    lambda: f64,
    step: f64,
    n: usize,
    init: &QueueInit,
    coupling: &Coupling,
    order: usize,
) -> Result<Marched> {
    let rule = Gregory::new(order);
    let mut forcing = Forcing::new(init)?;
    let head = order.min(n.saturating_sub(1));
    let mut out = Marched {
        delta: vec![0.0; n],
        h: vec![0.0; n],
        psi: vec![0.0; n],
    };
    if n == 0 {
        return Ok(out);
    }
    let mut a = vec![0.0; n];

    if head > 0 {
        let fine_n = head * REFINE + 1;
        let fine_step = step / REFINE as f64;
        let fine = match coupling {
            Coupling::Given(d) => {
                let nodes = order.min(d.len() - 1).max(1);
                let fd: Vec<f64> = (0..fine_n)
                    .map(|i| lagrange(&d[..=nodes], step, i as f64 * fine_step).max(0.0))
                    .collect();
                march_core(
                    lambda,
                    fine_step,
                    fine_n,
                    &mut forcing,
                    &Coupling::Given(&fd),
                    &rule,
                    None,
                )?
            }
            Coupling::Coupled { .. } => march_core(
                lambda,
                fine_step,
                fine_n,
                &mut forcing,
                coupling,
                &rule,
                None,
            )?,
        };
        for i in 0..=head {
            out.delta[i] = fine.0.delta[i * REFINE];
            out.h[i] = fine.0.h[i * REFINE];
            out.psi[i] = fine.0.psi[i * REFINE];
            a[i] = fine.1[i * REFINE];
        }
    }
    Ok(march_core(
        lambda,
        step,
        n,
        &mut forcing,
        coupling,
        &rule,
        Some((out, a, head)),
    )?
    .0)
}

/// Samples on the halved grid; midpoints from a local six-point interpolant.
pub(crate) fn halve(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let m = 6.min(n);
    let mut out = Vec::with_capacity(2 * n - 1);
    for i in 0..n {
        out.push(v[i]);
        if i + 1 < n {
            let s = (i + 1).saturating_sub(m / 2).min(n - m);
            out.push(lagrange(&v[s..s + m], 1.0, i as f64 + 0.5 - s as f64).max(0.0));
        }
    }
    out
}

fn lagrange(y: &[f64], step: f64, t: f64) -> f64 {
    let n = y.len();
    let mut s = 0.0;
    for i in 0..n {
        let mut l = 1.0;
        for j in 0..n {
            if j != i {
                l *= (t - j as f64 * step) / ((i as f64 - j as f64) * step);
            }
        }
        s += l * y[i];
    }
    s
}

#[allow(clippy::type_complexity)]
fn march_core(
    lambda: f64,
    step: f64,
    n: usize,
    forcing: &mut Forcing,
    coupling: &Coupling,
    rule: &Gregory,
    start: Option<(Marched, Vec<f64>, usize)>,
) -> Result<(Marched, Vec<f64>)> {
    let (mut out, mut a, done) = match start {
        Some(s) => s,
        None => (
            Marched {
                delta: vec![0.0; n],
                h: vec![0.0; n],
                psi: vec![0.0; n],
            },
            vec![0.0; n],
            0,
        ),
    };
    if done == 0 {
        out.delta[0] = match coupling {
            Coupling::Given(d) => d[0],
            Coupling::Coupled { .. } => 0.0,
        };
        a[0] = 0.0;
        out.psi[0] = forcing.at(lambda, 0.0, 0.0);
        out.h[0] = out.psi[0];
    }
    let given_a = match coupling {
        Coupling::Given(d) => Some(rule.cumulative(&d[..n], step)),
        Coupling::Coupled { .. } => None,
    };
    let mut kd = vec![0.0; n];
    let mut decay = vec![0.0; n];
    for i in (done + 1)..n {
        let ti = i as f64 * step;
        let w: Vec<f64> = rule.weights(i).into_iter().map(|x| x * step).collect();
        let wi = w[i];

        let solve_h = |ai: f64, forcing: &mut Forcing, kd: &mut [f64], h: &[f64]| -> (f64, f64) {
            let mut acc = 0.0;
            for j in 0..i {
                kd[j] = kern(lambda, (i - j) as f64 * step, ai - a[j]);
                acc += w[j] * kd[j] * h[j];
            }
            let psi = forcing.at(lambda, ti, ai);
            ((psi + lambda * acc) / (1.0 - lambda * wi), psi)
        };

        match coupling {
            Coupling::Given(d) => {
                let ai = given_a.as_ref().expect("given")[i];
                let (hi, psi) = solve_h(ai, forcing, &mut kd, &out.h);
                out.delta[i] = d[i];
                a[i] = ai;
                out.h[i] = hi;
                out.psi[i] = psi;
            }
            Coupling::Coupled { mu } => {
                let mut partial_a = 0.0;
                let mut partial_d = 0.0;
                for j in 0..i {
                    decay[j] = (-mu * (i - j) as f64 * step).exp();
                    partial_a += w[j] * out.delta[j];
                    partial_d += w[j] * decay[j] * (1.0 - out.h[j]);
                }
                let mut di = match i {
                    1 => out.delta[0],
                    2 => 2.0 * out.delta[1] - out.delta[0],
                    _ => 3.0 * out.delta[i - 1] - 3.0 * out.delta[i - 2] + out.delta[i - 3],
                }
                .max(0.0);
                let mut converged = false;
                let (mut hi, mut psi) = (0.0, 0.0);
                for _ in 0..100 {
                    let ai = partial_a + wi * di;
                    (hi, psi) = solve_h(ai, forcing, &mut kd, &out.h);
                    let next = lambda * mu * (partial_d + wi * (1.0 - hi));
                    let change = (next - di).abs();
                    di = next;
                    if change <= 1e-15 * di.abs().max(1.0) {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return Err(Error::NoConvergence {
                        iterations: 100,
                        detail: format!("rate fixed point at t = {ti}"),
                    });
                }
                out.delta[i] = di;
                a[i] = partial_a + wi * di;
                out.h[i] = hi;
                out.psi[i] = psi;
            }
        }
    }
    Ok((out, a))
}

/// Solves the Volterra equation for a prescribed rate.
pub fn solve_h(delta: &RateFunction, lambda: f64, init: &QueueInit) -> Result<VolterraSolution> {
    solve_h_with(delta, lambda, init, &VolterraOptions::default())
}

pub fn solve_h_with(
    delta: &RateFunction,
    lambda: f64,
    init: &QueueInit,
    opts: &VolterraOptions,
) -> Result<VolterraSolution> {
    if !(lambda > 0.0) {
        return Err(Error::param("lambda", "must be positive"));
    }
    let n = delta.len();
    let sol = march(
        lambda,
        delta.step,
        n,
        init,
        &Coupling::Given(&delta.values),
        opts.order,
    )?;
    let mut defect = 0.0;
    if opts.estimate_defect && n >= 3 {
        let half = halve(&delta.values);
        let fine = march(
            lambda,
            delta.step / 2.0,
            half.len(),
            init,
            &Coupling::Given(&half),
            opts.order,
        )?;
        defect = sol
            .h
            .iter()
            .enumerate()
            .map(|(i, c)| (c - fine.h[2 * i]).abs())
            .fold(0.0, f64::max);
        if defect > opts.defect_threshold {
            return Err(Error::GridTooCoarse {
                defect,
                threshold: opts.defect_threshold,
            });
        }
    }
    Ok(VolterraSolution {
        step: delta.step,
        h: sol.h,
        psi: sol.psi,
        defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gregory_weights_are_exact_on_polynomials() {
        let g = Gregory::new(6);
        for n in [1usize, 3, 6, 7, 13, 40] {
            let w = g.weights(n);
            let deg_max = if n >= 6 { 7 } else { n.min(6) + 1 };
            for deg in 0..deg_max as i32 {
                let got: f64 = w
                    .iter()
                    .enumerate()
                    .map(|(i, wi)| wi * (i as f64).powi(deg))
                    .sum();
                let want = (n as f64).powi(deg + 1) / (deg + 1) as f64;
                assert!(
                    (got - want).abs() < 1e-9 * want.max(1.0),
                    "n={n} deg={deg}: {got} vs {want}"
                );
            }
        }
        // cumulative agrees with the explicit weights
        let f: Vec<f64> = (0..30).map(|i| (0.1 * i as f64).sin()).collect();
        let cum = g.cumulative(&f, 0.1);
        for n in [0usize, 2, 9, 29] {
            let direct: f64 = g.weights(n).iter().zip(&f).map(|(w, x)| w * x).sum::<f64>() * 0.1;
            assert!((cum[n] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(kern(1.0, 0.0, 0.3), 1.0);
        assert!((kern(2.0, 1.5, 0.0) - (-3.0f64).exp()).abs() < 1e-16);
        let want = (-2.0f64).exp() * (2.2795853 - 1.5906369);
        assert!((kern(1.0, 1.0, 1.0) - want).abs() < 1e-7);
        assert!((kern(1.0, 1.0, 1.0) - 0.0932390).abs() < 1e-7);
        assert!(kernel_d(2.0, 1.0, 1.0, |t| t).is_err());
        let d = kernel_d(0.5, 1.5, 1.0, |t| t).unwrap();
        assert!((d - kern(1.0, 1.0, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn kernel_integrates_to_one_over_lambda() {
        // lambda int_0^inf D(0, t) dt = 1 for a constant subcritical rate
        let (lambda, gamma) = (1.0, 0.4);
        let h = 0.01;
        let f: Vec<f64> = (0..=40000)
            .map(|i| kern(lambda, i as f64 * h, gamma * i as f64 * h))
            .collect();
        let total = Gregory::new(6).cumulative(&f, h).last().copied().unwrap();
        assert!((lambda * total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn forcing_examples() {
        let e = QueueInit::empty();
        let psi = psi_forcing(&e, 1.0, &[0.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(psi[0], 1.0);
        assert!((psi[1] - 0.3678794).abs() < 1e-7);
        let g = QueueInit::Geometric { q: 0.4 };
        assert!((psi_forcing(&g, 1.0, &[0.0], &[0.0]).unwrap()[0] - 0.6).abs() < 1e-15);
        assert!(QueueInit::Finite(vec![0.5, 0.4]).validate().is_err());
        assert!(QueueInit::Geometric { q: 1.0 }.validate().is_err());
    }

    #[test]
    fn forcing_closed_form_for_empty_start() {
        // psi = e^{-x-y} I0(2 sqrt(x y))
        let mut f = Forcing::new(&QueueInit::empty()).unwrap();
        for &(t, a) in &[(0.5, 0.2), (3.0, 1.0), (40.0, 15.0), (300.0, 120.0)] {
            let x: f64 = t;
            let z = 2.0 * (x * a).sqrt();
            let want = (-(x.sqrt() - a.sqrt()).powi(2)).exp() * i0e(z);
            let got = f.at(1.0, t, a);
            assert!(
                ((got - want) / want).abs() < 1e-11,
                "t={t}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn no_arrivals_from_empty_stays_empty() {
        let d = RateFunction::constant(0.0, 0.05, 10.0).unwrap();
        let s = solve_h(&d, 1.0, &QueueInit::empty()).unwrap();
        assert!(s.h.iter().all(|h| (h - 1.0).abs() < 1e-10));
    }

    #[test]
    fn single_car_without_arrivals() {
        // one car, no arrivals: H(t) = 1 - e^{-lambda t}
        let d = RateFunction::constant(0.0, 0.05, 10.0).unwrap();
        let s = solve_h(&d, 2.0, &QueueInit::point(1)).unwrap();
        for (t, h) in s.times().iter().zip(&s.h) {
            assert!((h - (1.0 - (-2.0 * t).exp())).abs() < 5e-9, "t={t}");
        }
    }

    #[test]
    fn constant_rate_relaxes_to_idle_fraction() {
        let d = RateFunction::constant(0.5, 0.05, 40.0).unwrap();
        let s = solve_h(&d, 1.0, &QueueInit::empty()).unwrap();
        // independent birth-death solve (400 levels, DOP853 at rtol 1e-12) gives 0.5002570133
        assert!((s.h.last().unwrap() - 0.5002570133).abs() < 1e-8);
        assert!(s.h.iter().all(|h| *h >= 0.5 - 1e-12));
        assert!(s.defect < 1e-6);
    }
}
