//! Forward equations of an M(t)/M/1 queue on a truncated state space.
//!
//! The queue has a time-varying arrival rate and a constant service rate
//! `serv`. In the reservation model the car queue of a station is exactly this
//! queue, fed at rate `delta(t)` and served at rate `lambda`. The state space is
//! `{0..n_max}` with a reflecting top; if the top cells pick up mass, `n_max`
//! doubles and the run restarts.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::dopri::{self, DopriOptions};

/// Distribution of the queue length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BDState {
    p: Vec<f64>,
}

impl BDState {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() || p.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidState(
                "queue law must be non-empty and non-negative".into(),
            ));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidState(format!("queue law sums to {s}")));
        }
        Ok(Self { p })
    }

    pub fn point(n_max: usize, n: usize) -> Result<Self> {
        if n > n_max {
            return Err(Error::param("n", format!("{n} lies above n_max = {n_max}")));
        }
        let mut p = vec![0.0; n_max + 1];
        p[n] = 1.0;
        Ok(Self { p })
    }

    pub fn empty(n_max: usize) -> Self {
        Self::point(n_max, 0).expect("0 <= n_max")
    }

    /// `(1 - r) r^n`, renormalized on `{0..n_max}`.
    pub fn geometric(n_max: usize, r: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::param("r", format!("must lie in [0, 1), got {r}")));
        }
        let mut p: Vec<f64> = (0..=n_max).map(|n| (1.0 - r) * r.powi(n as i32)).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        Ok(Self { p })
    }

    pub fn n_max(&self) -> usize {
        self.p.len() - 1
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// `s_n = sum_{m <= n} p_m`.
    pub fn s(&self) -> Vec<f64> {
        self.p
            .iter()
            .scan(0.0, |acc, x| {
                *acc += x;
                Some(*acc)
            })
            .collect()
    }

    /// Probability of an empty queue.
    pub fn p0(&self) -> f64 {
        self.p[0]
    }

    pub fn mean(&self) -> f64 {
        self.p.iter().enumerate().map(|(n, x)| n as f64 * x).sum()
    }

    fn resized(&self, n_max: usize) -> Self {
        let mut p = self.p.clone();
        p.resize(n_max + 1, 0.0);
        Self { p }
    }

    pub fn l1_distance(&self, other: &BDState) -> f64 {
        let n = self.p.len().max(other.p.len());
        (0..n)
            .map(|i| (self.p.get(i).unwrap_or(&0.0) - other.p.get(i).unwrap_or(&0.0)).abs())
            .sum()
    }
}

/// A non-negative arrival rate `beta(t)`.
#[derive(Clone)]
pub enum ArrivalProfile {
    Constant(f64),
    /// `level * (1 - e^{-rate t})`.
    Relaxing {
        level: f64,
        rate: f64,
    },
    /// Samples on `0, step, 2 step, ...`, linearly interpolated and held after the end.
    Table {
        step: f64,
        values: Vec<f64>,
    },
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for ArrivalProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Relaxing { level, rate } => {
                write!(f, "Relaxing {{ level: {level}, rate: {rate} }}")
            }
            Self::Table { step, values } => {
                write!(f, "Table {{ step: {step}, len: {} }}", values.len())
            }
            Self::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl ArrivalProfile {
    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Function(Arc::new(f))
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Relaxing { level, rate } => level * (1.0 - (-rate * t).exp()),
            Self::Table { step, values } => {
                let x = t / step;
                let i = x.floor().max(0.0) as usize;
                if i + 1 >= values.len() {
                    *values.last().unwrap_or(&0.0)
                } else {
                    let f = x - i as f64;
                    values[i] * (1.0 - f) + values[i + 1] * f
                }
            }
            Self::Function(g) => g(t),
        }
    }

    fn max_on(&self, t_grid: &[f64]) -> f64 {
        t_grid.iter().map(|t| self.at(*t)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Mass allowed in the top cells before the state space is doubled.
    pub tail_tol: f64,
    pub max_doublings: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            tail_tol: 1e-10,
            max_doublings: 6,
        }
    }
}

/// Default truncation `ceil(20 + 10 g / (serv - g))` for the largest arrival rate `g`.
pub fn default_n_max(gamma_max: f64, serv: f64) -> usize {
    if gamma_max < serv {
        (20.0 + 10.0 * gamma_max / (serv - gamma_max)).ceil() as usize
    } else {
        200
    }
}

const TOP: usize = 5;

fn top_mass(y: &[f64], n_max: usize, copies: usize) -> f64 {
    let len = n_max + 1;
    (0..copies)
        .map(|c| {
            y[c * len..(c + 1) * len]
                .iter()
                .rev()
                .take(TOP)
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Integrates several queues sharing the service rate side by side, so they share
/// one step sequence. Returns, per output time, one state per queue.
fn evolve_many(
    inits: &[&BDState],
    profiles: &[&ArrivalProfile],
    serv: f64,
    t_grid: &[f64],
    opts: &EvolveOptions,
) -> Result<Vec<Vec<BDState>>> {
    if !(serv > 0.0) {
        return Err(Error::param("serv", "service rate must be positive"));
    }
    if t_grid.is_empty() {
        return Err(Error::param("t_grid", "needs at least the initial time"));
    }
    let mut n_max = inits.iter().map(|s| s.n_max()).max().unwrap_or(0);
    for _ in 0..=opts.max_doublings {
        let copies = inits.len();
        let len = n_max + 1;
        let mut y0 = Vec::with_capacity(copies * len);
        for s in inits {
            y0.extend_from_slice(s.resized(n_max).p());
        }
        let rhs = |t: f64, y: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for (c, prof) in profiles.iter().enumerate() {
                let arr = prof.at(t);
                let base = c * len;
                for n in 0..len {
                    let x = y[base + n];
                    if n < n_max {
                        out[base + n] -= arr * x;
                        out[base + n + 1] += arr * x;
                    }
                    if n > 0 {
                        out[base + n] -= serv * x;
                        out[base + n - 1] += serv * x;
                    }
                }
            }
        };
        let mut frames = Vec::with_capacity(t_grid.len());
        let dopts = DopriOptions {
            rel_tol: opts.rel_tol,
            abs_tol: opts.abs_tol,
            ..Default::default()
        };
        let res = dopri::integrate(rhs, t_grid[0], &y0, t_grid, &dopts, |_, t, y| {
            let tail = top_mass(y, n_max, copies);
            if tail > opts.tail_tol {
                return Err(Error::TailBreach {
                    mass: tail,
                    limit: opts.tail_tol,
                    n_max,
                });
            }
            if let Some(v) = y.iter().find(|v| **v < -1e-12) {
                return Err(Error::InvalidState(format!(
                    "negative probability {v} at t = {t}"
                )));
            }
            frames.push(
                (0..copies)
                    .map(|c| BDState {
                        p: y[c * len..(c + 1) * len].to_vec(),
                    })
                    .collect(),
            );
            Ok(())
        });
        match res {
            Ok(_) => return Ok(frames),
            Err(Error::TailBreach { .. }) => n_max = 2 * n_max + 1,
            Err(e) => return Err(e),
        }
    }
    Err(Error::TailBreach {
        mass: f64::NAN,
        limit: opts.tail_tol,
        n_max,
    })
}

/// Queue-length law at every grid time, starting from `init` at `t_grid[0]`.
pub fn evolve(
    init: &BDState,
    profile: &ArrivalProfile,
    serv: f64,
    t_grid: &[f64],
) -> Result<Vec<BDState>> {
    evolve_with(init, profile, serv, t_grid, &EvolveOptions::default())
}

pub fn evolve_with(
    init: &BDState,
    profile: &ArrivalProfile,
    serv: f64,
    t_grid: &[f64],
    opts: &EvolveOptions,
) -> Result<Vec<BDState>> {
    Ok(evolve_many(&[init], &[profile], serv, t_grid, opts)?
        .into_iter()
        .map(|mut v| v.pop().expect("one queue"))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub holds: bool,
    /// Largest `S_gamma - S_beta` over levels and times (negative or zero when dominance is strict).
    pub worst_violation: f64,
    pub worst_time: f64,
    /// Smallest `H_beta - H_gamma` over the grid.
    pub min_emptiness_gap: f64,
    pub tolerance: f64,
}

pub const DOMINANCE_TOL: f64 = 1e-9;

/// Checks that the queue fed by the smaller profile stays stochastically smaller:
/// `S_beta(t) >= S_gamma(t)` componentwise, up to `1e-9`.
pub fn dominance_check(
    beta: &ArrivalProfile,
    gamma: &ArrivalProfile,
    init_b: &BDState,
    init_g: &BDState,
    serv: f64,
    t_grid: &[f64],
) -> Result<DominanceReport> {
    for &t in t_grid {
        let (b, g) = (beta.at(t), gamma.at(t));
        if b > g || b < 0.0 {
            return Err(Error::param(
                "beta",
                format!("need 0 <= beta <= gamma; at t = {t}: {b} vs {g}"),
            ));
        }
    }
    let n = init_b.n_max().max(init_g.n_max());
    let (sb0, sg0) = (init_b.resized(n).s(), init_g.resized(n).s());
    if sb0.iter().zip(&sg0).any(|(b, g)| *b < g - 1e-15) {
        return Err(Error::param("init_b", "initial laws are not ordered"));
    }
    let frames = evolve_many(
        &[init_b, init_g],
        &[beta, gamma],
        serv,
        t_grid,
        &EvolveOptions::default(),
    )?;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_time = t_grid[0];
    let mut min_gap = f64::INFINITY;
    for (t, f) in t_grid.iter().zip(&frames) {
        let (sb, sg) = (f[0].s(), f[1].s());
        for (b, g) in sb.iter().zip(&sg) {
            if g - b > worst {
                worst = g - b;
                worst_time = *t;
            }
        }
        min_gap = min_gap.min(f[0].p0() - f[1].p0());
    }
    Ok(DominanceReport {
        holds: worst <= DOMINANCE_TOL,
        worst_violation: worst,
        worst_time,
        min_emptiness_gap: min_gap,
        tolerance: DOMINANCE_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// `sup_t |P_beta(t) - P_gamma(t)|_1`.
    pub state_distance: f64,
    /// `sup_t |beta(t) - gamma(t)|` over the grid.
    pub profile_distance: f64,
    pub ratio: f64,
}

/// Empirical Lipschitz ratio of the solution map with respect to the arrival profile.
pub fn lipschitz_probe(
    beta: &ArrivalProfile,
    gamma: &ArrivalProfile,
    init: &BDState,
    serv: f64,
    t_grid: &[f64],
) -> Result<LipschitzReport> {
    let profile_distance = t_grid
        .iter()
        .map(|t| (beta.at(*t) - gamma.at(*t)).abs())
        .fold(0.0, f64::max);
    if profile_distance == 0.0 {
        return Err(Error::param(
            "gamma",
            "profiles coincide on the grid; the ratio is undefined",
        ));
    }
    let frames = evolve_many(
        &[init, init],
        &[beta, gamma],
        serv,
        t_grid,
        &EvolveOptions::default(),
    )?;
    let state_distance = frames
        .iter()
        .map(|f| f[0].l1_distance(&f[1]))
        .fold(0.0, f64::max);
    Ok(LipschitzReport {
        state_distance,
        profile_distance,
        ratio: state_distance / profile_distance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub limit: f64,
    pub ratio: f64,
    pub horizon: f64,
    pub l1: f64,
}

/// Compares the queue fed by `profile` (started empty) at `horizon` with the
/// geometric law of ratio `limit / serv`.
pub fn stationary_equivalence(
    profile: &ArrivalProfile,
    limit: f64,
    serv: f64,
    horizon: f64,
) -> Result<StationaryReport> {
    if !(limit >= 0.0 && limit < serv) {
        return Err(Error::param(
            "limit",
            format!("need 0 <= limit < serv for ergodicity, got {limit}"),
        ));
    }
    let r = limit / serv;
    let n_max = default_n_max(profile.max_on(&[0.0, horizon]).max(limit), serv);
    let end = evolve(&BDState::empty(n_max), profile, serv, &[0.0, horizon])?
        .pop()
        .expect("two frames");
    let target = BDState::geometric(end.n_max(), r)?;
    Ok(StationaryReport {
        limit,
        ratio: r,
        horizon,
        l1: end.l1_distance(&target),
    })
}

/// Horizon `50 / (sqrt(serv) - sqrt(limit))^2` after which the stationary match is expected.
pub fn relaxation_horizon(limit: f64, serv: f64) -> f64 {
    50.0 / (serv.sqrt() - limit.sqrt()).powi(2)
}

/// Settings of the randomized property suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub pairs: usize,
    pub serv: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Knots of the random piecewise-linear profiles.
    pub knots: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            pairs: 50,
            serv: 1.0,
            horizon: 20.0,
            dt: 0.1,
            knots: 9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub pairs: usize,
    pub dominance_holds: usize,
    pub worst_violation: f64,
    /// Smallest probability seen in any run.
    pub min_probability: f64,
    /// Largest `|sum p - 1|` seen in any run.
    pub max_mass_defect: f64,
    /// Pair with the largest empirical Lipschitz ratio (both queues started from the same law).
    pub lipschitz: LipschitzReport,
    pub stationary: StationaryReport,
}

impl SuiteReport {
    pub fn all_hold(&self) -> bool {
        self.dominance_holds == self.pairs
    }
}

/// Random ordered pair `beta <= gamma` of piecewise-linear profiles below `0.9 serv`
/// with ordered geometric starting laws.
pub fn random_ordered_pair(
    rng: &mut impl rand::Rng,
    opts: &SuiteOptions,
) -> (ArrivalProfile, ArrivalProfile, BDState, BDState) {
    let step = opts.horizon / (opts.knots.max(2) - 1) as f64;
    let gamma: Vec<f64> = (0..opts.knots.max(2))
        .map(|_| rng.random::<f64>() * 0.9 * opts.serv)
        .collect();
    // both tables share their knots, so ordering at the knots carries over
    let beta: Vec<f64> = gamma.iter().map(|g| g * rng.random::<f64>()).collect();
    let (rb, rg) = {
        let a = rng.random::<f64>() * 0.8;
        let b = rng.random::<f64>() * 0.8;
        (a.min(b), a.max(b))
    };
    let n = default_n_max(0.9 * opts.serv, opts.serv);
    (
        ArrivalProfile::Table { step, values: beta },
        ArrivalProfile::Table {
            step,
            values: gamma,
        },
        BDState::geometric(n, rb).expect("ratio below 1"),
        BDState::geometric(n, rg).expect("ratio below 1"),
    )
}

/// Dominance on random ordered pairs, positivity and conservation on every run,
/// one Lipschitz probe and the constant-profile stationary match.
pub fn property_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let steps = (opts.horizon / opts.dt).round() as usize;
    let t_grid: Vec<f64> = (0..=steps).map(|i| i as f64 * opts.dt).collect();
    let mut holds = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut min_p = f64::INFINITY;
    let mut max_defect: f64 = 0.0;
    let mut lipschitz: Option<LipschitzReport> = None;
    for _ in 0..opts.pairs {
        let (beta, gamma, ib, ig) = random_ordered_pair(&mut rng, opts);
        let r = dominance_check(&beta, &gamma, &ib, &ig, opts.serv, &t_grid)?;
        holds += r.holds as usize;
        worst = worst.max(r.worst_violation);
        for (prof, init) in [(&beta, &ib), (&gamma, &ig)] {
            for s in evolve(init, prof, opts.serv, &t_grid)? {
                min_p = s.p().iter().copied().fold(min_p, f64::min);
                max_defect = max_defect.max((s.p().iter().sum::<f64>() - 1.0).abs());
            }
        }
        match lipschitz_probe(&beta, &gamma, &ib, opts.serv, &t_grid) {
            Ok(l) if lipschitz.as_ref().is_none_or(|w| l.ratio > w.ratio) => lipschitz = Some(l),
            Ok(_) | Err(Error::InvalidParam { field: "gamma", .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let lipschitz = match lipschitz {
        Some(l) => l,
        None => {
            return Err(Error::param(
                "pairs",
                "the suite needs at least one distinct pair",
            ))
        }
    };
    let limit = 0.5 * opts.serv;
    let stationary = stationary_equivalence(
        &ArrivalProfile::Constant(limit),
        limit,
        opts.serv,
        relaxation_horizon(limit, opts.serv),
    )?;
    Ok(SuiteReport {
        pairs: opts.pairs,
        dominance_holds: holds,
        worst_violation: worst,
        min_probability: min_p,
        max_mass_defect: max_defect,
        lipschitz,
        stationary,
    })
}
