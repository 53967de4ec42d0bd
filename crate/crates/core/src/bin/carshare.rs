use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use carshare_mf::experiment::{self, ExperimentKind};
use carshare_mf::Error;

#[derive(Parser)]
#[command(
    name = "carshare",
    version,
    about = "Car-sharing mean-field laboratory"
)]
struct Cli {
    /// JSON experiment config; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root directory for run directories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-N particle simulation.
    Simulate(Params),
    /// Integrate the mean-field equations.
    Meanfield(Params),
    /// Solve for the equilibrium.
    Equilibrium(Params),
    /// Solve the coupled rate / Volterra system.
    Delta(Params),
    /// Fit the relaxation rate of b(t).
    Ratefit(Params),
    /// Simulator vs mean-field vs equilibrium.
    Xval(Params),
    /// Birth-death property suite.
    Dominance(Params),
}

/// Parameter flags mirroring the config keys. Comma-separated values sweep.
#[derive(Args, Default)]
struct Params {
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    mu: Vec<f64>,
    /// Fleet density U (cars per station).
    #[arg(long = "u", alias = "fleet-density", value_delimiter = ',')]
    fleet_density: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    capacity: Vec<usize>,
    /// reservation_infinite | no_reservation_finite | reservation_finite
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n_stations: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    /// Horizon of the subcommand's main computation.
    #[arg(long)]
    horizon: Option<f64>,
    /// Sampling interval of the simulator, or time step of the rate system.
    #[arg(long)]
    dt: Option<f64>,
    /// all_reserved | all_cars | uniform
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    pairs: Option<usize>,
}

fn sweep<T: Into<Value> + Copy>(v: &[T]) -> Option<Value> {
    match v {
        [] => None,
        [x] => Some((*x).into()),
        xs => Some(Value::Array(xs.iter().map(|x| (*x).into()).collect())),
    }
}

fn set(obj: &mut Map<String, Value>, path: &[&str], value: Value) {
    match path {
        [key] => {
            obj.insert(key.to_string(), value);
        }
        [head, rest @ ..] => {
            let child = obj.entry(head.to_string()).or_insert_with(|| json!({}));
            if !child.is_object() {
                *child = json!({});
            }
            set(child.as_object_mut().expect("object"), rest, value);
        }
        [] => {}
    }
}

fn build_config(cli: &Cli) -> carshare_mf::Result<experiment::ExperimentConfig> {
    let (kind, p) = match &cli.command {
        Command::Simulate(p) => (ExperimentKind::Simulate, p),
        Command::Meanfield(p) => (ExperimentKind::Meanfield, p),
        Command::Equilibrium(p) => (ExperimentKind::Equilibrium, p),
        Command::Delta(p) => (ExperimentKind::Delta, p),
        Command::Ratefit(p) => (ExperimentKind::Ratefit, p),
        Command::Xval(p) => (ExperimentKind::Xval, p),
        Command::Dominance(p) => (ExperimentKind::Dominance, p),
    };
    let mut value = match &cli.config {
        Some(path) => experiment::load_config(path)?,
        None => json!({}),
    };
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
    set(obj, &["kind"], json!(kind));
    let scalars = [
        ("lambda", sweep(&p.lambda)),
        ("mu", sweep(&p.mu)),
        ("U", sweep(&p.fleet_density)),
        ("capacity", sweep(&p.capacity)),
    ];
    for (key, v) in scalars {
        if let Some(v) = v {
            set(obj, &[key], v);
        }
    }
    if let Some(m) = &p.model {
        set(obj, &["model"], json!(m));
    }
    if let Some(s) = cli.seed {
        set(obj, &["seed"], json!(s));
    }
    if let Some(n) = p.n_stations {
        set(obj, &["sim", "n_stations"], json!(n));
    }
    if let Some(n) = p.replications {
        set(obj, &["sim", "replications"], json!(n));
    }
    if let Some(n) = p.pairs {
        set(obj, &["dominance", "pairs"], json!(n));
    }
    let section = match kind {
        ExperimentKind::Simulate | ExperimentKind::Xval => "sim",
        ExperimentKind::Delta => "delta",
        ExperimentKind::Dominance => "dominance",
        _ => "ode",
    };
    if let Some(h) = p.horizon {
        set(obj, &[section, "horizon"], json!(h));
    }
    if let Some(dt) = p.dt {
        let key = if section == "delta" { "step" } else { "dt" };
        if section == "ode" {
            return Err(Error::Config(
                "--dt does not apply here; set ode.samples in the config".into(),
            ));
        }
        set(obj, &[section, key], json!(dt));
    }
    if let Some(init) = &p.init {
        let path: &[&str] = match kind {
            ExperimentKind::Ratefit => &["ratefit", "init"],
            ExperimentKind::Simulate | ExperimentKind::Xval => &["sim", "init"],
            _ => &["ode", "init"],
        };
        set(obj, path, json!(init));
    }
    experiment::parse_config_value(value)
}

fn run(cli: &Cli) -> carshare_mf::Result<()> {
    let config = build_config(cli)?;
    let threads = cli.threads.or(config.threads);
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    for record in experiment::run_experiment(&config, &out)? {
        println!("{}", record.dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
