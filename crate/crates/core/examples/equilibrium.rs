//! Equilibria of the three models at one parameter point.

use carshare_mf::equilibrium::{self, solve_model3};
use carshare_mf::{ModelParams, StationLaw};

fn main() -> carshare_mf::Result<()> {
    let m1 = ModelParams::model1(1.0, 1.0, 1.0)?;
    let eq = equilibrium::solve(&m1, None)?;
    println!(
        "unbounded: beta = {:.10}, delta_bar = {:.10}",
        eq.beta.unwrap(),
        eq.delta_bar.unwrap()
    );
    if let StationLaw::Joint(pi) = &eq.pi {
        println!(
            "  pi(0,0) = {:.7}, tail outside grid {:.1e}",
            pi.get(0, 0),
            eq.tail_defect
        );
    }

    let m2 = ModelParams::model2(1.0, 1.0, 1.0, 1)?;
    println!(
        "no reservations, K=1: beta = {:.12}",
        equilibrium::beta_model2(&m2)?
    );

    let m3 = ModelParams::model3(1.0, 1.0, 0.5, 1)?;
    let s = solve_model3(&m3)?;
    println!(
        "capped, K=1: rho_R = {:.10}, rho_V = {:.10}, Z = {:.10}",
        s.rho_r, s.rho_v, s.z
    );
    Ok(())
}
