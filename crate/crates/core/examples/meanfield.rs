//! Mean-field trajectory from an all-reserved start, printed every 5 time units.

use carshare_mf::ode::{self, IntegrateOptions};
use carshare_mf::sim::{law_distance, InitKind};
use carshare_mf::{equilibrium, ModelParams};

fn main() -> carshare_mf::Result<()> {
    let p = ModelParams::model1(1.0, 1.0, 1.0)?;
    let init = ode::initial_law(InitKind::AllReserved, &p)?;
    let traj = ode::integrate(
        &init,
        &ode::uniform_grid(60.0, 5.0),
        &p,
        &IntegrateOptions::default(),
    )?;
    let pi = equilibrium::solve(&p, None)?.pi;
    println!(
        "{:>5} {:>10} {:>10} {:>10} {:>10}",
        "t", "b", "r", "delta", "L1 to pi"
    );
    for (s, f) in traj.states.iter().zip(&traj.functionals) {
        println!(
            "{:>5.0} {:>10.6} {:>10.6} {:>10.6} {:>10.2e}",
            f.t,
            f.b,
            f.r.unwrap(),
            f.delta.unwrap(),
            law_distance(s, &pi)
        );
    }
    println!("max mass defect {:.1e}", traj.max_mass_defect);
    Ok(())
}
