//! One pipeline per experiment kind. Each returns its artifacts in memory.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Artifact, RateFitSection, RunSpec};
use crate::delta::{self, estimate_rate, QueueInit, RateEstimate, RateFitOptions};
use crate::equilibrium;
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelParams, StationLaw, Tolerances};
use crate::ode::{self, IntegrateOptions, Trajectory};
use crate::sim::{self, EmpiricalMeasure, InitKind, SimConfig};
use crate::transient;

fn csv_artifact(name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Artifact> {
    let mut bytes = Vec::new();
    write(&mut bytes)?;
    Ok(Artifact::new(name, bytes))
}

fn ode_options(tol: &Tolerances) -> IntegrateOptions {
    IntegrateOptions {
        tol: *tol,
        ..Default::default()
    }
}

fn grid(horizon: f64, samples: usize) -> Vec<f64> {
    (0..=samples)
        .map(|i| horizon * i as f64 / samples as f64)
        .collect()
}

fn sim_config(spec: &RunSpec) -> SimConfig {
    let s = &spec.sim;
    SimConfig {
        replications: s.replications,
        ..SimConfig::for_density(&spec.params, s.n_stations, s.horizon, s.dt, spec.seed)
    }
}

pub fn simulate(spec: &RunSpec) -> Result<Vec<Artifact>> {
    let cfg = sim_config(spec);
    let reps = sim::run_kind(&cfg, &spec.params, spec.sim.init)?;
    let mean = sim::mean_measures(&reps)?;
    let mut out = Vec::with_capacity(reps.len() + 2);
    for (i, rep) in reps.iter().enumerate() {
        out.push(csv_artifact(&format!("replication-{i:03}.csv"), |w| {
            sim::write_csv(rep, w)
        })?);
    }
    out.push(csv_artifact("mean.csv", |w| sim::write_csv(&mean, w))?);
    #[derive(Serialize)]
    struct Summary {
        n_stations: usize,
        fleet_size: u64,
        replications: usize,
        functionals: Vec<ode::Functionals>,
    }
    let functionals = mean
        .iter()
        .map(|m| ode::functionals_of(m.time, &m.counts, &spec.params))
        .collect();
    out.push(Artifact::json(
        "summary.json",
        &Summary {
            n_stations: cfg.n_stations,
            fleet_size: cfg.fleet_size,
            replications: reps.len(),
            functionals,
        },
    )?);
    Ok(out)
}

pub fn meanfield(spec: &RunSpec) -> Result<Vec<Artifact>> {
    let init = ode::initial_law(spec.ode_init, &spec.params)?;
    let traj = ode::integrate(
        &init,
        &grid(spec.ode_horizon, spec.ode_samples),
        &spec.params,
        &ode_options(&spec.tolerances),
    )?;
    let eq = equilibrium::solve(&spec.params, None)?;
    #[derive(Serialize)]
    struct Summary {
        horizon: f64,
        max_mass_defect: f64,
        grid_expansions: usize,
        renormalizations: usize,
        l1_to_equilibrium: f64,
    }
    let summary = Summary {
        horizon: spec.ode_horizon,
        max_mass_defect: traj.max_mass_defect,
        grid_expansions: traj.grid_expansions,
        renormalizations: traj.renormalizations,
        l1_to_equilibrium: sim::law_distance(traj.last(), &eq.pi),
    };
    Ok(vec![
        csv_artifact("trajectory.csv", |w| traj.write_csv(w))?,
        Artifact::new("functionals.json", traj.functionals_json()?.into_bytes()),
        Artifact::json("summary.json", &summary)?,
    ])
}

pub fn equilibrium(spec: &RunSpec) -> Result<Vec<Artifact>> {
    let sol = equilibrium::solve(&spec.params, None)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        model: ModelKind,
        params: &'a ModelParams,
        #[serde(skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        delta_bar: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        rho_r: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        rho_v: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        z: Option<f64>,
        tail_defect: f64,
    }
    let summary = Summary {
        model: sol.model,
        params: &spec.params,
        beta: sol.beta,
        delta_bar: sol.delta_bar,
        rho_r: sol.rho_r,
        rho_v: sol.rho_v,
        z: sol.z,
        tail_defect: sol.tail_defect,
    };
    let pi = csv_artifact("pi.csv", |w| {
        sim::write_csv(
            &[EmpiricalMeasure {
                time: f64::INFINITY,
                counts: sol.pi.clone(),
            }],
            w,
        )
    })?;
    Ok(vec![Artifact::json("equilibrium.json", &summary)?, pi])
}

/// Car law of the round-robin start: no reservations, `U` cars per station on average.
pub fn spread_queue_init(params: &ModelParams) -> Result<QueueInit> {
    let law = ode::initial_law(InitKind::Uniform, params)?;
    let d = law
        .joint()
        .ok_or_else(|| Error::param("model", "the rate system needs reservations"))?;
    Ok(QueueInit::Finite(d.marginal_cars()))
}

pub fn delta(spec: &RunSpec) -> Result<Vec<Artifact>> {
    let p = &spec.params;
    let (rate, sol) = delta::solve_delta_system(
        p,
        &spread_queue_init(p)?,
        spec.delta_horizon,
        spec.delta_step,
    )?;
    let delta_bar = equilibrium::delta_bar(p);
    let csv = csv_artifact("delta.csv", |w| {
        let mut s = String::from("t,delta,H,bound\n");
        for (i, (d, h)) in rate.values.iter().zip(&sol.h).enumerate() {
            let t = i as f64 * rate.step;
            let bound = p.lambda * (1.0 - (-p.mu * t).exp());
            writeln!(s, "{t},{d:e},{h:e},{bound:e}").expect("string write");
        }
        w.extend_from_slice(s.as_bytes());
        Ok(())
    })?;
    #[derive(Serialize)]
    struct Summary {
        step: f64,
        horizon: f64,
        delta_end: f64,
        delta_bar: f64,
        gap: f64,
        defect: f64,
    }
    let summary = Summary {
        step: rate.step,
        horizon: rate.horizon(),
        delta_end: rate.last(),
        delta_bar,
        gap: (rate.last() - delta_bar).abs(),
        defect: sol.defect,
    };
    Ok(vec![csv, Artifact::json("summary.json", &summary)?])
}

/// Limit of `b(t)` at equilibrium.
pub fn b_limit(params: &ModelParams) -> Result<f64> {
    let sol = equilibrium::solve(params, None)?;
    Ok(ode::functionals_of(f64::INFINITY, &sol.pi, params).b)
}

/// Integrates from `section.init` over `horizon_factor / v` and fits the decay
/// rate of `|b(t) - b_limit|`.
pub fn relaxation_fit(
    params: &ModelParams,
    section: &RateFitSection,
) -> Result<(RateEstimate, Trajectory)> {
    let v = match params.model {
        ModelKind::ReservationInfinite => delta::v_theory(params),
        _ => params.lambda.min(params.mu),
    };
    let horizon = section.horizon_factor / v;
    let init = ode::initial_law(section.init, params)?;
    let opts = IntegrateOptions::with_tolerances(section.tol, section.tol * 1e-4);
    let traj = ode::integrate(&init, &grid(horizon, section.samples), params, &opts)?;
    let b = traj.series(|f| f.b);
    let fit_opts = RateFitOptions {
        tol: section.tol,
        prefactor_power: section.prefactor_power,
        start_fraction: section.start_fraction,
        ..Default::default()
    };
    let mut est = estimate_rate(&traj.times, &b, b_limit(params)?, &fit_opts)?;
    if params.model == ModelKind::ReservationInfinite {
        est = est.with_theory(params);
    }
    Ok((est, traj))
}

pub fn ratefit(spec: &RunSpec) -> Result<Vec<Artifact>> {
    let (est, traj) = relaxation_fit(&spec.params, &spec.ratefit)?;
    let series = csv_artifact("b.csv", |w| {
        let mut s = String::from("t,b\n");
        for f in &traj.functionals {
            writeln!(s, "{},{:e}", f.t, f.b).expect("string write");
        }
        w.extend_from_slice(s.as_bytes());
        Ok(())
    })?;
    Ok(vec![Artifact::json("ratefit.json", &est)?, series])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XvalReport {
    pub sim_horizon: f64,
    pub ode_horizon: f64,
    /// L1 distance between the mean empirical measure and the mean-field law, per sample time.
    pub l1_sim_vs_ode: Vec<(f64, f64)>,
    pub l1_ode_vs_pi: f64,
    /// `|mu r(t_end) - delta_bar|` (unbounded model only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_gap: Option<f64>,
}

impl XvalReport {
    pub fn final_l1_sim_vs_ode(&self) -> f64 {
        self.l1_sim_vs_ode.last().map_or(f64::NAN, |x| x.1)
    }
}

/// Mean empirical measures of the simulator against the mean-field law at the same times.
pub fn sim_vs_ode(
    cfg: &SimConfig,
    params: &ModelParams,
    init: InitKind,
    tol: &Tolerances,
) -> Result<Vec<(f64, f64)>> {
    let reps = sim::run_kind(cfg, params, init)?;
    let mean = sim::mean_measures(&reps)?;
    let law = ode::initial_law(init, params)?;
    let traj = ode::integrate(&law, &cfg.sample_times, params, &ode_options(tol))?;
    Ok(mean
        .iter()
        .zip(&traj.states)
        .map(|(m, s)| (m.time, sim::law_distance(&m.counts, s)))
        .collect())
}

pub fn cross_validate(spec: &RunSpec) -> Result<XvalReport> {
    let p = &spec.params;
    let l1_sim_vs_ode = sim_vs_ode(&sim_config(spec), p, spec.sim.init, &spec.tolerances)?;
    let init: StationLaw = ode::initial_law(spec.sim.init, p)?;
    let traj = ode::integrate(
        &init,
        &[0.0, spec.ode_horizon],
        p,
        &ode_options(&spec.tolerances),
    )?;
    let eq = equilibrium::solve(p, None)?;
    let delta_gap = match (traj.functionals.last().and_then(|f| f.delta), eq.delta_bar) {
        (Some(d), Some(db)) => Some((d - db).abs()),
        _ => None,
    };
    Ok(XvalReport {
        sim_horizon: spec.sim.horizon,
        ode_horizon: spec.ode_horizon,
        l1_sim_vs_ode,
        l1_ode_vs_pi: sim::law_distance(traj.last(), &eq.pi),
        delta_gap,
    })
}

pub fn xval(spec: &RunSpec) -> Result<Vec<Artifact>> {
    Ok(vec![Artifact::json("report.json", &cross_validate(spec)?)?])
}

pub fn dominance(spec: &RunSpec) -> Result<Vec<Artifact>> {
    let report = transient::property_suite(&spec.dominance)?;
    Ok(vec![Artifact::json("dominance.json", &report)?])
}
