//! Experiment configuration, sweep expansion and run directories.
//!
//! A config is JSON. Any of `lambda`, `mu`, `U` and `capacity` may be a list; the
//! cartesian product becomes one run per point, in that nesting order. Each run is
//! fully resolved (every default filled in) and written to
//! `<out>/<kind>-<hash>/`, where the hash covers the resolved run spec. Artifacts
//! carry no timestamps, so the same spec always produces the same bytes; wall
//! time only appears in `manifest.json`.

pub mod pipelines;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Capacity, ModelKind, ModelParams, Tolerances};
use crate::sim::InitKind;
use crate::transient::SuiteOptions;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    #[serde(alias = "mean_field")]
    Meanfield,
    Equilibrium,
    #[serde(alias = "delta_system")]
    Delta,
    #[serde(alias = "rate_fit")]
    Ratefit,
    #[serde(alias = "cross_validate")]
    Xval,
    #[serde(alias = "dominance_suite")]
    Dominance,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Meanfield => "meanfield",
            Self::Equilibrium => "equilibrium",
            Self::Delta => "delta",
            Self::Ratefit => "ratefit",
            Self::Xval => "xval",
            Self::Dominance => "dominance",
        }
    }
}

/// A scalar or a list of values to sweep over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sweep<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> Sweep<T> {
    fn values(&self) -> Vec<T> {
        match self {
            Sweep::One(x) => vec![x.clone()],
            Sweep::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub n_stations: usize,
    pub replications: usize,
    pub horizon: f64,
    pub dt: f64,
    pub init: InitKind,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            n_stations: 1000,
            replications: 20,
            horizon: 10.0,
            dt: 1.0,
            init: InitKind::Uniform,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeSection {
    /// Defaults to `50 / v` for the unbounded model and `50 / min(lambda, mu)` otherwise.
    pub horizon: Option<f64>,
    /// Number of output intervals.
    pub samples: Option<usize>,
    /// Defaults to `all_reserved` (Models 1, 3) or `all_cars` (Model 2).
    pub init: Option<InitKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeltaSection {
    pub step: Option<f64>,
    /// Defaults to `50 / v`.
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateFitSection {
    /// Horizon in units of the relaxation time `1 / v`.
    pub horizon_factor: f64,
    pub samples: usize,
    pub prefactor_power: f64,
    /// The window opens once the gap is below this fraction of its initial value.
    pub start_fraction: f64,
    /// Accuracy assumed for the integrated series; the window closes at `1e3 * tol`.
    pub tol: f64,
    pub init: InitKind,
}

impl Default for RateFitSection {
    fn default() -> Self {
        Self {
            horizon_factor: 25.0,
            samples: 4000,
            prefactor_power: 1.5,
            start_fraction: 1e-4,
            tol: 1e-10,
            init: InitKind::AllReserved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DominanceSection {
    pub pairs: usize,
    /// Service rate of the queue; defaults to `lambda`.
    pub serv: Option<f64>,
    pub horizon: f64,
    pub dt: f64,
}

impl Default for DominanceSection {
    fn default() -> Self {
        let d = SuiteOptions::default();
        Self {
            pairs: d.pairs,
            serv: None,
            horizon: d.horizon,
            dt: d.dt,
        }
    }
}

/// Experiment description as read from JSON or flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    #[serde(default)]
    pub model: Option<ModelKind>,
    pub lambda: Sweep<f64>,
    pub mu: Sweep<f64>,
    #[serde(rename = "U", alias = "fleet_density")]
    pub fleet_density: Sweep<f64>,
    #[serde(default)]
    pub capacity: Option<Sweep<usize>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub ode: OdeSection,
    #[serde(default)]
    pub delta: DeltaSection,
    #[serde(default)]
    pub ratefit: RateFitSection,
    #[serde(default)]
    pub dominance: DominanceSection,
    #[serde(default)]
    pub tolerances: Tolerances,
}

/// One fully resolved run. Its JSON form is hashed to name the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub kind: ExperimentKind,
    pub params: ModelParams,
    pub seed: u64,
    pub sim: SimSection,
    pub ode_horizon: f64,
    pub ode_samples: usize,
    pub ode_init: InitKind,
    pub delta_step: f64,
    pub delta_horizon: f64,
    pub ratefit: RateFitSection,
    pub dominance: SuiteOptions,
    pub tolerances: Tolerances,
}

impl RunSpec {
    pub fn id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("run specs serialize");
        let digest = Sha256::digest(&bytes);
        format!("{}-{}", self.kind.name(), &hex::encode(digest)[..16])
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn parse_config_value(value: Value) -> Result<ExperimentConfig> {
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn default_horizon(params: &ModelParams) -> f64 {
    match params.model {
        ModelKind::ReservationInfinite => 50.0 / crate::delta::v_theory(params),
        _ => 50.0 / params.lambda.min(params.mu),
    }
}

fn positive(field: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be positive, got {x}")))
    }
}

impl ExperimentConfig {
    /// Expands sweeps and resolves defaults, validating every point.
    pub fn expand(&self) -> Result<Vec<RunSpec>> {
        let kind = self
            .kind
            .ok_or_else(|| Error::param("kind", "missing experiment kind"))?;
        let model = match (self.model, &self.capacity) {
            (Some(m), _) => m,
            (None, None) => ModelKind::ReservationInfinite,
            (None, Some(_)) => {
                return Err(Error::param("model", "required when a capacity is given"))
            }
        };
        let caps: Vec<Capacity> = match (&self.capacity, model) {
            (None, ModelKind::ReservationInfinite) => vec![Capacity::Infinite],
            (None, _) => {
                return Err(Error::param(
                    "capacity",
                    format!("required for model {model:?}"),
                ))
            }
            (Some(s), _) => s.values().into_iter().map(Capacity::Finite).collect(),
        };
        for (name, n) in [
            ("lambda", self.lambda.values().len()),
            ("mu", self.mu.values().len()),
            ("U", self.fleet_density.values().len()),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("`{name}` sweep is empty")));
            }
        }
        positive("sim.horizon", self.sim.horizon.max(f64::MIN_POSITIVE))?;
        positive("sim.dt", self.sim.dt)?;
        positive("dominance.dt", self.dominance.dt)?;
        positive("dominance.horizon", self.dominance.horizon)?;
        let mut runs = Vec::new();
        for &lambda in &self.lambda.values() {
            for &mu in &self.mu.values() {
                for &u in &self.fleet_density.values() {
                    for &cap in &caps {
                        let params = ModelParams::new(lambda, mu, u, cap, model)?;
                        runs.push(self.resolve(kind, params)?);
                    }
                }
            }
        }
        Ok(runs)
    }

    fn resolve(&self, kind: ExperimentKind, params: ModelParams) -> Result<RunSpec> {
        let ode_horizon = self.ode.horizon.unwrap_or_else(|| default_horizon(&params));
        positive("ode.horizon", ode_horizon)?;
        let ode_init = self.ode.init.unwrap_or(match params.model {
            ModelKind::NoReservationFinite => InitKind::AllCars,
            _ => InitKind::AllReserved,
        });
        let delta_step = self
            .delta
            .step
            .unwrap_or_else(|| crate::delta::default_step(&params));
        positive("delta.step", delta_step)?;
        let delta_horizon = self
            .delta
            .horizon
            .unwrap_or_else(|| default_horizon(&params));
        let serv = self.dominance.serv.unwrap_or(params.lambda);
        positive("dominance.serv", serv)?;
        Ok(RunSpec {
            kind,
            params,
            seed: self.seed,
            sim: self.sim.clone(),
            ode_horizon,
            ode_samples: self.ode.samples.unwrap_or(200).max(1),
            ode_init,
            delta_step,
            delta_horizon,
            ratefit: self.ratefit.clone(),
            dominance: SuiteOptions {
                pairs: self.dominance.pairs,
                serv,
                horizon: self.dominance.horizon,
                dt: self.dominance.dt,
                seed: self.seed,
                ..SuiteOptions::default()
            },
            tolerances: self.tolerances,
        })
    }
}

/// A named output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            bytes,
        }
    }

    pub fn json(name: impl Into<String>, value: &impl Serialize) -> Result<Self> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        Ok(Self::new(name, bytes))
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub library_version: String,
    pub run_id: String,
    pub spec: RunSpec,
    pub outputs: Vec<OutputEntry>,
    /// Not part of any hashed payload.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

/// Computes the artifacts of one run without touching the file system.
pub fn run_spec(spec: &RunSpec) -> Result<Vec<Artifact>> {
    use pipelines::*;
    match spec.kind {
        ExperimentKind::Simulate => simulate(spec),
        ExperimentKind::Meanfield => meanfield(spec),
        ExperimentKind::Equilibrium => equilibrium(spec),
        ExperimentKind::Delta => delta(spec),
        ExperimentKind::Ratefit => ratefit(spec),
        ExperimentKind::Xval => xval(spec),
        ExperimentKind::Dominance => dominance(spec),
    }
}

/// Runs every point of the config and writes one directory per run under `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Vec<RunRecord>> {
    let specs = config.expand()?;
    let mut records = Vec::with_capacity(specs.len());
    for spec in specs {
        let start = Instant::now();
        let artifacts = run_spec(&spec)?;
        let run_id = spec.id();
        let dir = out.join(&run_id);
        fs::create_dir_all(&dir)?;
        for a in &artifacts {
            fs::write(dir.join(&a.name), &a.bytes)?;
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            run_id,
            outputs: artifacts
                .iter()
                .map(|a| OutputEntry {
                    name: a.name.clone(),
                    sha256: a.sha256(),
                    bytes: a.bytes.len(),
                })
                .collect(),
            spec,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
        log::info!("wrote {}", dir.display());
        records.push(RunRecord { dir, manifest });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_equilibrium_config() {
        let c =
            parse_config_str(r#"{"lambda": 1, "mu": 1, "U": 1, "kind": "equilibrium"}"#).unwrap();
        let runs = c.expand().unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].params.model, ModelKind::ReservationInfinite);
        assert_eq!(runs[0].sim, SimSection::default());
        assert_eq!(runs[0].tolerances, Tolerances::default());
    }

    #[test]
    fn missing_capacity_is_named() {
        let c = parse_config_str(
            r#"{"lambda": 1, "mu": 1, "U": 1, "kind": "meanfield", "model": "no_reservation_finite"}"#,
        )
        .unwrap();
        match c.expand() {
            Err(
                e @ Error::InvalidParam {
                    field: "capacity", ..
                },
            ) => assert!(e.is_validation()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sweep_order_is_deterministic() {
        let c = parse_config_str(
            r#"{"lambda": 1, "mu": [1, 2], "U": [0.5, 1, 2], "kind": "equilibrium"}"#,
        )
        .unwrap();
        let runs = c.expand().unwrap();
        let got: Vec<(f64, f64)> = runs
            .iter()
            .map(|r| (r.params.mu, r.params.fleet_density))
            .collect();
        assert_eq!(
            got,
            vec![
                (1.0, 0.5),
                (1.0, 1.0),
                (1.0, 2.0),
                (2.0, 0.5),
                (2.0, 1.0),
                (2.0, 2.0)
            ]
        );
        let ids: std::collections::BTreeSet<String> = runs.iter().map(|r| r.id()).collect();
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn rejects_bad_input() {
        let e = parse_config_str("{}").unwrap_err();
        assert!(e.is_validation());
        let e = parse_config_str(
            r#"{"lambda": 1, "mu": 1, "U": 1, "kind": "equilibrium", "bogus": 3}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("bogus"));
        let c =
            parse_config_str(r#"{"lambda": -1, "mu": 1, "U": 1, "kind": "equilibrium"}"#).unwrap();
        assert!(c.expand().unwrap_err().is_validation());
    }
}
