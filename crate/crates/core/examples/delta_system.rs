//! Output rate of the reservation queue from the coupled rate / Volterra system,
//! bracketed by the two monotone iterations.

use carshare_mf::delta::{lower_scheme, solve_delta_system, upper_scheme, QueueInit};
use carshare_mf::{equilibrium, ModelParams};

fn main() -> carshare_mf::Result<()> {
    let p = ModelParams::model1(1.0, 1.0, 1.0)?;
    let init = QueueInit::geometric_with_mean(1.0);
    let (horizon, h) = (30.0, 0.05);
    let (rate, sol) = solve_delta_system(&p, &init, horizon, h)?;
    let lo = lower_scheme(&p, &init, horizon, h, &Default::default())?;
    let up = upper_scheme(&p, &init, 0.6, horizon, h, &Default::default())?;
    for i in (0..rate.len()).step_by(60) {
        println!(
            "t = {:>4.1}  delta = {:.8}  H = {:.8}  lower {:.8}  upper {:.8}",
            i as f64 * h,
            rate.values[i],
            sol.h[i],
            lo.limit().values[i],
            up.limit().values[i]
        );
    }
    println!(
        "delta_bar = {:.8}, quadrature defect {:.1e}",
        equilibrium::delta_bar(&p),
        sol.defect
    );
    println!(
        "{} lower and {} upper iterates",
        lo.iterates.len(),
        up.iterates.len()
    );
    Ok(())
}
