//! Finite network of the capped model, averaged over replications.

use carshare_mf::ode::functionals_of;
use carshare_mf::sim::{self, InitKind, SimConfig};
use carshare_mf::ModelParams;

fn main() -> carshare_mf::Result<()> {
    let p = ModelParams::model3(1.0, 2.0, 1.5, 3)?;
    let cfg = SimConfig {
        replications: 8,
        ..SimConfig::for_density(&p, 2000, 20.0, 2.0, 7)
    };
    let reps = sim::run_kind(&cfg, &p, InitKind::Uniform)?;
    let mean = sim::mean_measures(&reps)?;
    for m in &mean {
        let f = functionals_of(m.time, &m.counts, &p);
        println!(
            "t = {:>4.0}  P(car) = {:.4}  P(room) = {:.4}  reservations = {:.4}",
            m.time,
            f.b,
            f.c.unwrap_or(1.0),
            f.r.unwrap_or(0.0)
        );
    }
    Ok(())
}
