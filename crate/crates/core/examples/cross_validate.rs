//! Simulator against the mean-field law as the network grows.

use carshare_mf::experiment::pipelines::sim_vs_ode;
use carshare_mf::sim::{InitKind, SimConfig};
use carshare_mf::{ModelParams, Tolerances};

fn main() -> carshare_mf::Result<()> {
    let p = ModelParams::model1(1.0, 1.0, 1.0)?;
    for n in [100, 1_000, 10_000] {
        let cfg = SimConfig {
            replications: 20,
            ..SimConfig::for_density(&p, n, 10.0, 5.0, 1)
        };
        let d = sim_vs_ode(&cfg, &p, InitKind::Uniform, &Tolerances::default())?;
        let row: Vec<String> = d.iter().map(|(t, l1)| format!("t={t}: {l1:.4}")).collect();
        println!("N = {n:>5}  {}", row.join("  "));
    }
    Ok(())
}
