//! Mean-field Kolmogorov systems of the three station models.
//!
//! Each right-hand side is assembled from elementary flows between cells, so
//! probability is conserved exactly. Model 1 lives on a truncated grid whose
//! "up" flows are suppressed at the edge (reflecting boundary); the resulting
//! drift of `sum (j + k) alpha` is watched and the grid grows when it matters.

pub mod dopri;

use std::io::Write;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    poisson_pmf, JointDist, MarginalDist, ModelKind, ModelParams, StationLaw, Tolerances,
    TruncationGrid,
};
use crate::sim::InitKind;
use dopri::DopriOptions;

/// Self-consistent functionals of a state. Fields not defined for a model are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Functionals {
    pub t: f64,
    /// Probability that a car is available at a station.
    pub b: f64,
    /// Mean number of parked cars.
    pub a: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    /// Mean number of pending reservations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Output rate `mu r` of the reservation queue.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub model: ModelKind,
    pub times: Vec<f64>,
    pub states: Vec<StationLaw>,
    pub functionals: Vec<Functionals>,
    /// Largest `|sum (j + k) alpha - U|` seen (Models 1 and 3).
    pub max_mass_defect: f64,
    pub grid_expansions: usize,
    pub renormalizations: usize,
}

impl Trajectory {
    pub fn last(&self) -> &StationLaw {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn series(&self, f: impl Fn(&Functionals) -> f64) -> Vec<f64> {
        self.functionals.iter().map(f).collect()
    }

    /// Long-format CSV: `t,j,k,alpha` (k = 0 for marginal laws).
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,j,k,alpha")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            match s {
                StationLaw::Joint(d) => {
                    for (j, k) in d.grid().cells() {
                        let a = d.get(j, k);
                        if a != 0.0 {
                            writeln!(w, "{t},{j},{k},{a:e}")?;
                        }
                    }
                }
                StationLaw::Marginal(d) => {
                    for (j, a) in d.as_slice().iter().enumerate() {
                        writeln!(w, "{t},{j},0,{a:e}")?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn functionals_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.functionals)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub tol: Tolerances,
    /// How many times a Model 1 grid may grow before the mass defect is fatal.
    pub max_expansions: usize,
    pub h_max: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            max_expansions: 6,
            h_max: f64::INFINITY,
        }
    }
}

impl IntegrateOptions {
    pub fn with_tolerances(rel: f64, abs: f64) -> Self {
        let mut o = Self::default();
        o.tol.ode_rel_tol = rel;
        o.tol.ode_abs_tol = abs;
        o
    }
}

// ---------------------------------------------------------------- right-hand sides

#[inline]
fn flow(out: &mut [f64], from: usize, to: usize, rate: f64) {
    out[from] -= rate;
    out[to] += rate;
}

fn rhs1_raw(grid: &TruncationGrid, lambda: f64, mu: f64, y: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let cols = grid.cols();
    let no_car: f64 = (0..=grid.j_max).map(|j| y[j * cols]).sum();
    let b = 1.0 - no_car;
    for j in 0..=grid.j_max {
        for k in 0..=grid.k_max {
            let i = j * cols + k;
            let a = y[i];
            if a == 0.0 {
                continue;
            }
            if j < grid.j_max {
                flow(out, i, i + cols, lambda * b * a);
            }
            if j > 0 && k < grid.k_max {
                flow(out, i, i - cols + 1, mu * j as f64 * a);
            }
            if k > 0 {
                flow(out, i, i - 1, lambda * a);
            }
        }
    }
}

fn rhs2_raw(k_cap: usize, lambda: f64, mu: f64, u: f64, y: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let a: f64 = y.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
    let birth = mu * (u - a);
    for j in 0..=k_cap {
        if j < k_cap {
            flow(out, j, j + 1, birth * y[j]);
        }
        if j > 0 {
            flow(out, j, j - 1, lambda * y[j]);
        }
    }
}

fn rhs3_raw(grid: &TruncationGrid, k_cap: usize, lambda: f64, mu: f64, y: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let cols = grid.cols();
    let mut no_car = 0.0;
    let mut full = 0.0;
    for j in 0..=k_cap {
        no_car += y[j * cols];
        full += y[j * cols + (k_cap - j)];
    }
    let d = 1.0 - no_car;
    let c = 1.0 - full;
    for j in 0..=k_cap {
        for k in 0..=k_cap - j {
            let i = j * cols + k;
            let a = y[i];
            if a == 0.0 {
                continue;
            }
            if j + k < k_cap {
                flow(out, i, i + cols, lambda * d * a);
            }
            if j > 0 {
                flow(out, i, i - cols + 1, mu * j as f64 * a);
            }
            if k > 0 {
                flow(out, i, i - 1, lambda * c * a);
            }
        }
    }
}

fn check_model(params: &ModelParams, want: ModelKind) -> Result<()> {
    if params.model != want {
        return Err(Error::param(
            "model",
            format!("expected {want:?}, got {:?}", params.model),
        ));
    }
    params.validate()
}

/// Time derivative of the unbounded reservation model, laid out like `state`.
pub fn rhs_model1(state: &JointDist, params: &ModelParams) -> Result<Vec<f64>> {
    check_model(params, ModelKind::ReservationInfinite)?;
    let grid = *state.grid();
    let mut out = vec![0.0; grid.len()];
    rhs1_raw(&grid, params.lambda, params.mu, state.as_slice(), &mut out);
    Ok(out)
}

/// Time derivative of the no-reservation model. A state with more parked cars
/// than the fleet (`a > U`) is rejected: the arrival rate would be negative.
pub fn rhs_model2(state: &MarginalDist, params: &ModelParams) -> Result<Vec<f64>> {
    check_model(params, ModelKind::NoReservationFinite)?;
    let k = capacity_of(params)?;
    if state.capacity() != k {
        return Err(Error::GridMismatch(format!(
            "state on 0..={} but K = {k}",
            state.capacity()
        )));
    }
    check_parked(state, params.fleet_density)?;
    let mut out = vec![0.0; k + 1];
    rhs2_raw(
        k,
        params.lambda,
        params.mu,
        params.fleet_density,
        state.as_slice(),
        &mut out,
    );
    Ok(out)
}

/// Time derivative of the capped reservation model on `{j + k <= K}`.
pub fn rhs_model3(state: &JointDist, params: &ModelParams) -> Result<Vec<f64>> {
    check_model(params, ModelKind::ReservationFinite)?;
    let k = capacity_of(params)?;
    check_capped(state, k)?;
    let grid = *state.grid();
    let mut out = vec![0.0; grid.len()];
    rhs3_raw(
        &grid,
        k,
        params.lambda,
        params.mu,
        state.as_slice(),
        &mut out,
    );
    Ok(out)
}

fn capacity_of(params: &ModelParams) -> Result<usize> {
    params
        .capacity
        .finite()
        .ok_or_else(|| Error::param("capacity", "finite capacity required"))
}

fn check_parked(state: &MarginalDist, u: f64) -> Result<()> {
    let a = state.mean();
    if a > u + 1e-12 {
        return Err(Error::InvalidState(format!(
            "mean parked cars {a} exceeds fleet density {u}"
        )));
    }
    Ok(())
}

fn check_capped(state: &JointDist, k: usize) -> Result<()> {
    let g = state.grid();
    if g.joint_cap != Some(k) || g.j_max != k || g.k_max != k {
        return Err(Error::GridMismatch(format!(
            "expected the capped grid j + k <= {k}"
        )));
    }
    Ok(())
}

/// Mean `sum (j + k) alpha_{jk}`.
pub fn joint_mass(d: &JointDist) -> f64 {
    d.mean_reservations() + d.mean_cars()
}

pub fn functionals_of(t: f64, state: &StationLaw, params: &ModelParams) -> Functionals {
    match state {
        StationLaw::Joint(d) => {
            let r = d.mean_reservations();
            let (c, dd) = if params.model == ModelKind::ReservationFinite {
                (Some(1.0 - d.prob_full()), Some(1.0 - d.prob_no_car()))
            } else {
                (None, None)
            };
            Functionals {
                t,
                b: 1.0 - d.prob_no_car(),
                a: d.mean_cars(),
                c,
                d: dd,
                r: Some(r),
                delta: Some(params.mu * r),
            }
        }
        StationLaw::Marginal(d) => Functionals {
            t,
            b: 1.0 - d.get(0),
            a: d.mean(),
            c: None,
            d: None,
            r: None,
            delta: None,
        },
    }
}

// ---------------------------------------------------------------- integration

/// Integrates the model selected by `params.model` from `init` (the state at
/// `t_grid[0]`) and records the state and its functionals at every grid time.
pub fn integrate(
    init: &StationLaw,
    t_grid: &[f64],
    params: &ModelParams,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    params.validate()?;
    if t_grid.is_empty() {
        return Err(Error::param("t_grid", "needs at least the initial time"));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("t_grid", "times must be non-decreasing"));
    }
    let sum: f64 = init.as_slice().iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState(format!(
            "initial law has total probability {sum}"
        )));
    }
    match (params.model, init) {
        (ModelKind::ReservationInfinite, StationLaw::Joint(d)) => {
            check_fleet(d, params)?;
            let mut dist = d.clone();
            for expansions in 0..=opts.max_expansions {
                match run_joint(&dist, t_grid, params, opts, expansions) {
                    Err(Error::MassBreach { t, defect }) if expansions < opts.max_expansions => {
                        let grid = dist.grid().expanded();
                        debug!(
                            "mass defect {defect:e} at t = {t}; growing grid to {}x{}",
                            grid.j_max, grid.k_max
                        );
                        dist = dist.embed(grid)?;
                    }
                    other => return other,
                }
            }
            unreachable!("loop returns on its last iteration")
        }
        (ModelKind::ReservationFinite, StationLaw::Joint(d)) => {
            check_capped(d, capacity_of(params)?)?;
            check_fleet(d, params)?;
            run_joint(d, t_grid, params, opts, 0)
        }
        (ModelKind::NoReservationFinite, StationLaw::Marginal(d)) => {
            let k = capacity_of(params)?;
            if d.capacity() != k {
                return Err(Error::GridMismatch(format!(
                    "state on 0..={} but K = {k}",
                    d.capacity()
                )));
            }
            check_parked(d, params.fleet_density)?;
            run_marginal(d, k, t_grid, params, opts)
        }
        _ => Err(Error::GridMismatch(
            "initial law does not match the model".into(),
        )),
    }
}

fn check_fleet(d: &JointDist, params: &ModelParams) -> Result<()> {
    let m = joint_mass(d);
    if (m - params.fleet_density).abs() > 1e-6 * params.fleet_density.max(1.0) {
        return Err(Error::InvalidState(format!(
            "initial mean units per station {m} differs from U = {}",
            params.fleet_density
        )));
    }
    Ok(())
}

fn dopri_opts(opts: &IntegrateOptions) -> DopriOptions {
    DopriOptions {
        rel_tol: opts.tol.ode_rel_tol,
        abs_tol: opts.tol.ode_abs_tol,
        h_max: opts.h_max,
        ..Default::default()
    }
}

/// Output copy of an integrator state: round-off negatives clipped, total renormalized
/// if it drifted. The integrator itself keeps the raw state, whose linear invariants
/// (total probability, `sum (j + k) alpha`) are preserved exactly by the Runge-Kutta
/// steps. Returns the copy and whether it was renormalized.
fn tidy(y: &[f64], t: f64) -> (Vec<f64>, bool) {
    let mut out = y.to_vec();
    let mut clipped = 0usize;
    let mut worst = 0.0f64;
    for v in out.iter_mut() {
        if *v < 0.0 {
            worst = worst.min(*v);
            clipped += 1;
            *v = 0.0;
        }
    }
    if worst < -1e-9 {
        warn!("clipped {clipped} entries down to {worst:e} at t = {t}");
    } else if worst < -1e-12 {
        debug!("clipped {clipped} entries down to {worst:e} at t = {t}");
    }
    let s: f64 = out.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        debug!("renormalizing by {s} at t = {t}");
        out.iter_mut().for_each(|v| *v /= s);
        (out, true)
    } else {
        (out, false)
    }
}

fn run_joint(
    init: &JointDist,
    t_grid: &[f64],
    params: &ModelParams,
    opts: &IntegrateOptions,
    expansions: usize,
) -> Result<Trajectory> {
    let grid = *init.grid();
    let (lambda, mu) = (params.lambda, params.mu);
    let reference = joint_mass(init);
    let mut traj = Trajectory {
        model: params.model,
        times: Vec::with_capacity(t_grid.len()),
        states: Vec::with_capacity(t_grid.len()),
        functionals: Vec::with_capacity(t_grid.len()),
        max_mass_defect: 0.0,
        grid_expansions: expansions,
        renormalizations: 0,
    };
    let cap = params.capacity.finite();
    let rhs = |_t: f64, y: &[f64], out: &mut [f64]| match cap {
        None => rhs1_raw(&grid, lambda, mu, y, out),
        Some(k) => rhs3_raw(&grid, k, lambda, mu, y, out),
    };
    let breach = if cap.is_none() {
        opts.tol.mass_tol
    } else {
        100.0 * opts.tol.mass_tol
    };
    dopri::integrate(
        rhs,
        t_grid[0],
        init.as_slice(),
        t_grid,
        &dopri_opts(opts),
        |_, t, y| {
            let raw = JointDist::from_vec_unchecked(grid, y.to_vec());
            let defect = (joint_mass(&raw) - reference).abs();
            if defect > breach {
                return Err(Error::MassBreach { t, defect });
            }
            let (clean, renormalized) = tidy(y, t);
            traj.renormalizations += renormalized as usize;
            let d = JointDist::from_vec_unchecked(grid, clean);
            traj.max_mass_defect = traj
                .max_mass_defect
                .max(defect)
                .max((joint_mass(&d) - reference).abs());
            let law = StationLaw::Joint(d);
            traj.functionals.push(functionals_of(t, &law, params));
            traj.times.push(t);
            traj.states.push(law);
            Ok(())
        },
    )?;
    Ok(traj)
}

fn run_marginal(
    init: &MarginalDist,
    k: usize,
    t_grid: &[f64],
    params: &ModelParams,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let (lambda, mu, u) = (params.lambda, params.mu, params.fleet_density);
    let mut traj = Trajectory {
        model: params.model,
        times: vec![],
        states: vec![],
        functionals: vec![],
        max_mass_defect: 0.0,
        grid_expansions: 0,
        renormalizations: 0,
    };
    let rhs = |_t: f64, y: &[f64], out: &mut [f64]| rhs2_raw(k, lambda, mu, u, y, out);
    dopri::integrate(
        rhs,
        t_grid[0],
        init.as_slice(),
        t_grid,
        &dopri_opts(opts),
        |_, t, y| {
            let (clean, renormalized) = tidy(y, t);
            traj.renormalizations += renormalized as usize;
            let law = StationLaw::Marginal(MarginalDist::new(clean)?);
            traj.functionals.push(functionals_of(t, &law, params));
            traj.times.push(t);
            traj.states.push(law);
            Ok(())
        },
    )?;
    Ok(traj)
}

// ---------------------------------------------------------------- functional equations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResidual {
    pub x: f64,
    pub y: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub probes: Vec<ProbeResidual>,
    pub max_residual: f64,
}

/// `F(x, y)` and `dF/dx` of a joint law.
pub fn generating_function(d: &JointDist, x: f64, y: f64) -> (f64, f64) {
    let g = d.grid();
    let (mut f, mut fx) = (0.0, 0.0);
    let mut xj = 1.0;
    let mut xj1 = 0.0; // x^(j-1)
    for j in 0..=g.j_max {
        let mut yk = 1.0;
        for k in 0..=g.k_max {
            if g.contains(j, k) {
                let a = d.get(j, k);
                f += a * xj * yk;
                fx += a * j as f64 * xj1 * yk;
            }
            yk *= y;
        }
        xj1 = xj;
        xj *= x;
    }
    (f, fx)
}

fn boundary_gf(d: &JointDist, k_cap: usize, x: f64, y: f64) -> f64 {
    (0..=k_cap)
        .map(|j| d.get(j, k_cap - j) * x.powi(j as i32) * y.powi((k_cap - j) as i32))
        .sum()
}

/// Residual of the generating-function form of the Kolmogorov system along a
/// trajectory, with a central difference in time. For Model 2 the probe's `y`
/// is the generating-function variable.
pub fn functional_residual(
    traj: &Trajectory,
    params: &ModelParams,
    probe_points: &[(f64, f64)],
) -> Result<ResidualReport> {
    for &(x, y) in probe_points {
        if !(x.abs() <= 1.0 && y.abs() <= 1.0) || y == 0.0 {
            return Err(Error::ProbeDomain { x, y });
        }
    }
    let (lambda, mu, u) = (params.lambda, params.mu, params.fleet_density);
    let n = traj.times.len();
    let mut probes = Vec::with_capacity(probe_points.len());
    for &(x, y) in probe_points {
        // value of the generating function and the non-time part of the equation
        let eval = |s: &StationLaw, f: &Functionals| -> (f64, f64) {
            let inv = 1.0 - 1.0 / y;
            match (params.model, s) {
                (ModelKind::ReservationInfinite, StationLaw::Joint(d)) => {
                    let (fv, fx) = generating_function(d, x, y);
                    let (f0, _) = generating_function(d, x, 0.0);
                    let rest = (lambda * f.b * (1.0 - x) + lambda * inv) * fv
                        - mu * (y - x) * fx
                        - lambda * inv * f0;
                    (fv, rest)
                }
                (ModelKind::ReservationFinite, StationLaw::Joint(d)) => {
                    let kc = params.capacity.finite().unwrap_or(0);
                    let (fv, fx) = generating_function(d, x, y);
                    let (f0, _) = generating_function(d, x, 0.0);
                    let (c, dd) = (f.c.unwrap_or(0.0), f.d.unwrap_or(0.0));
                    let rest = (lambda * dd * (1.0 - x) + lambda * c * inv) * fv
                        - mu * (y - x) * fx
                        - lambda * c * inv * f0
                        - lambda * dd * (1.0 - x) * boundary_gf(d, kc, x, y);
                    (fv, rest)
                }
                (_, StationLaw::Marginal(d)) => {
                    let z = y;
                    let kc = d.capacity();
                    let q: f64 = d
                        .as_slice()
                        .iter()
                        .enumerate()
                        .map(|(j, a)| a * z.powi(j as i32))
                        .sum();
                    let arr = mu * (u - f.a);
                    let zinv = 1.0 - 1.0 / z;
                    let rest = (arr * (1.0 - z) + lambda * zinv) * q
                        - lambda * zinv * d.get(0)
                        - arr * d.get(kc) * z.powi(kc as i32) * (1.0 - z);
                    (q, rest)
                }
                _ => (f64::NAN, f64::NAN),
            }
        };
        let vals: Vec<(f64, f64)> = traj
            .states
            .iter()
            .zip(&traj.functionals)
            .map(|(s, f)| eval(s, f))
            .collect();
        let mut worst: f64 = 0.0;
        for i in 1..n.saturating_sub(1) {
            let dt = traj.times[i + 1] - traj.times[i - 1];
            if dt <= 0.0 {
                continue;
            }
            let ft = (vals[i + 1].0 - vals[i - 1].0) / dt;
            worst = worst.max((ft + vals[i].1).abs());
        }
        if n == 1 {
            // a single state: only the stationary part can be checked
            worst = vals[0].1.abs();
        }
        probes.push(ProbeResidual {
            x,
            y,
            max_residual: worst,
        });
    }
    let max_residual = probes.iter().map(|p| p.max_residual).fold(0.0, f64::max);
    Ok(ResidualReport {
        probes,
        max_residual,
    })
}

/// Large-network limit of a simulator initial condition.
///
/// In the unbounded model, random placement of `U N` reservations (or cars) tends to
/// Poisson(U) on that axis. With finite capacity, random placement with rejection
/// has no simple limit, so every kind maps to the deterministic round-robin spread:
/// mass `1 - f` on `floor(U)` and `f` on `floor(U) + 1`.
pub fn initial_law(kind: InitKind, params: &ModelParams) -> Result<StationLaw> {
    params.validate()?;
    let u = params.fleet_density;
    let m = u.floor() as usize;
    let f = u - m as f64;
    let spread = |n: usize| {
        let mut v = vec![0.0; n.max(m + 1) + 1];
        v[m] = 1.0 - f;
        if f > 0.0 {
            v[m + 1] = f;
        }
        v
    };
    let grid = TruncationGrid::for_params(params);
    match (params.model, kind) {
        (ModelKind::NoReservationFinite, InitKind::AllReserved) => {
            Err(Error::param("init", "Model 2 has no reservations"))
        }
        (ModelKind::NoReservationFinite, _) => {
            let k = capacity_of(params)?;
            let mut v = spread(k);
            v.truncate(k + 1);
            Ok(StationLaw::Marginal(MarginalDist::new(v)?))
        }
        (ModelKind::ReservationInfinite, InitKind::AllReserved) => Ok(StationLaw::Joint(
            JointDist::product(grid, &poisson_pmf(u, grid.j_max), &[1.0])?,
        )),
        (ModelKind::ReservationInfinite, InitKind::AllCars) => Ok(StationLaw::Joint(
            JointDist::product(grid, &[1.0], &poisson_pmf(u, grid.k_max))?,
        )),
        (_, InitKind::AllReserved) => Ok(StationLaw::Joint(JointDist::product(
            grid,
            &spread(0),
            &[1.0],
        )?)),
        (_, _) => Ok(StationLaw::Joint(JointDist::product(
            grid,
            &[1.0],
            &spread(0),
        )?)),
    }
}

/// Evenly spaced times `0, dt, ..., horizon`.
pub fn uniform_grid(horizon: f64, dt: f64) -> Vec<f64> {
    let n = (horizon / dt).round() as usize;
    (0..=n).map(|i| i as f64 * dt).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium;

    fn m1() -> ModelParams {
        ModelParams::model1(1.0, 1.0, 1.0).unwrap()
    }

    fn l1(v: &[f64]) -> f64 {
        v.iter().map(|x| x.abs()).sum()
    }

    #[test]
    fn empty_system_is_fixed() {
        let p = ModelParams::model1(1.0, 1.0, 0.0).unwrap();
        let d = JointDist::point(TruncationGrid::rect(4, 4), 0, 0).unwrap();
        assert!(rhs_model1(&d, &p).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn model1_equilibrium_is_stationary() {
        let p = m1();
        let pi = equilibrium::pi_model1(&p, TruncationGrid::for_model1(&p)).unwrap();
        assert!(l1(&rhs_model1(&pi, &p).unwrap()) < 1e-8);
    }

    #[test]
    fn model1_single_car_by_hand() {
        let p = m1();
        let g = TruncationGrid::rect(3, 3);
        let d = JointDist::point(g, 0, 1).unwrap();
        let r = rhs_model1(&d, &p).unwrap();
        // b = 1: arrival to (1,1) at rate 1, car leaves to (0,0) at rate 1
        assert_eq!(r[g.index(0, 1)], -2.0);
        assert_eq!(r[g.index(1, 1)], 1.0);
        assert_eq!(r[g.index(0, 0)], 1.0);
        assert_eq!(r.iter().sum::<f64>(), 0.0);
        let mass: f64 = g
            .cells()
            .map(|(j, k)| (j + k) as f64 * r[g.index(j, k)])
            .sum();
        assert_eq!(mass, 0.0);
    }

    #[test]
    fn model2_examples() {
        let p = ModelParams::model2(1.0, 1.0, 1.0, 1).unwrap();
        let r = rhs_model2(&MarginalDist::point(1, 1).unwrap(), &p).unwrap();
        assert_eq!(r, vec![1.0, -1.0]);
        let b = equilibrium::beta_model2(&p).unwrap();
        let r = rhs_model2(&equilibrium::pi_model2(b, 1), &p).unwrap();
        assert!(l1(&r) < 1e-10);
        let over = ModelParams::model2(1.0, 1.0, 0.5, 2).unwrap();
        assert!(rhs_model2(&MarginalDist::point(2, 2).unwrap(), &over).is_err());
    }

    #[test]
    fn model3_examples() {
        let p = ModelParams::model3(1.0, 1.0, 0.5, 1).unwrap();
        let s = equilibrium::solve_model3(&p).unwrap();
        assert!(l1(&rhs_model3(&s.pi, &p).unwrap()) < 1e-10);
        let full = ModelParams::model3(1.0, 1.0, 1.0, 1).unwrap();
        let d = JointDist::point(TruncationGrid::capped(1), 0, 1).unwrap();
        assert!(rhs_model3(&d, &full).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn relaxes_to_beta() {
        let p = m1();
        let grid = TruncationGrid::for_model1(&p);
        let init = JointDist::product(grid, &poisson_pmf(1.0, grid.j_max), &[1.0]).unwrap();
        let ts = uniform_grid(80.0, 1.0);
        let opts = IntegrateOptions::with_tolerances(1e-10, 1e-13);
        let tr = integrate(&StationLaw::Joint(init), &ts, &p, &opts).unwrap();
        let b = tr.functionals.last().unwrap().b;
        assert!((b - equilibrium::beta_model1(&p)).abs() < 1e-6, "b = {b}");
        assert!(tr.max_mass_defect < 1e-8);
        let res = functional_residual(&tr, &p, &[(1.0, 1.0)]).unwrap();
        assert!(res.max_residual < 1e-12);
    }

    #[test]
    fn zero_steps_returns_init() {
        let p = m1();
        let init = JointDist::point(TruncationGrid::for_model1(&p), 0, 1).unwrap();
        let tr = integrate(
            &StationLaw::Joint(init.clone()),
            &[0.0],
            &p,
            &Default::default(),
        )
        .unwrap();
        assert_eq!(tr.states, vec![StationLaw::Joint(init)]);
    }

    #[test]
    fn grid_grows_when_too_small() {
        let p = ModelParams::model1(1.0, 0.2, 2.0).unwrap();
        let grid = TruncationGrid::rect(4, 4);
        let init = JointDist::point(grid, 0, 2).unwrap();
        let tr = integrate(
            &StationLaw::Joint(init),
            &uniform_grid(20.0, 1.0),
            &p,
            &Default::default(),
        )
        .unwrap();
        assert!(tr.grid_expansions > 0);
        assert!(tr.max_mass_defect <= 1e-9);
    }

    #[test]
    fn probe_domain_is_checked() {
        let p = m1();
        let init = JointDist::point(TruncationGrid::for_model1(&p), 0, 1).unwrap();
        let tr = integrate(&StationLaw::Joint(init), &[0.0], &p, &Default::default()).unwrap();
        assert!(matches!(
            functional_residual(&tr, &p, &[(0.5, 0.0)]),
            Err(Error::ProbeDomain { .. })
        ));
        assert!(functional_residual(&tr, &p, &[(1.5, 0.5)]).is_err());
    }

    #[test]
    fn initial_laws_carry_the_fleet() {
        for p in [
            ModelParams::model1(1.0, 2.0, 1.5).unwrap(),
            ModelParams::model3(1.0, 1.0, 1.5, 3).unwrap(),
            ModelParams::model2(1.0, 1.0, 2.0, 2).unwrap(),
        ] {
            for kind in [InitKind::AllReserved, InitKind::AllCars, InitKind::Uniform] {
                match initial_law(kind, &p) {
                    Ok(StationLaw::Joint(d)) => {
                        assert!((joint_mass(&d) - p.fleet_density).abs() < 1e-9)
                    }
                    Ok(StationLaw::Marginal(d)) => {
                        assert!((d.mean() - p.fleet_density).abs() < 1e-12)
                    }
                    Err(_) => assert!(
                        kind == InitKind::AllReserved && p.model == ModelKind::NoReservationFinite
                    ),
                }
            }
        }
        let u = initial_law(
            InitKind::Uniform,
            &ModelParams::model3(1.0, 1.0, 1.5, 3).unwrap(),
        )
        .unwrap();
        let d = u.joint().unwrap();
        assert_eq!((d.get(0, 1), d.get(0, 2)), (0.5, 0.5));
    }
}
