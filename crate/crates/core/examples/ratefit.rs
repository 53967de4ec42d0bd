//! Fitted relaxation rate of b(t) against the lower bound min(mu, lambda (1 - sqrt beta)^2).

use carshare_mf::experiment::pipelines::relaxation_fit;
use carshare_mf::experiment::RateFitSection;
use carshare_mf::ModelParams;

fn main() -> carshare_mf::Result<()> {
    for (l, m, u) in [(1.0, 1.0, 1.0), (2.0, 1.0, 3.0), (1.0, 0.05, 1.0)] {
        let p = ModelParams::model1(l, m, u)?;
        let (est, _) = relaxation_fit(&p, &RateFitSection::default())?;
        println!(
            "({l}, {m}, {u}): v_hat = {:.4}, bound = {:.4}, R2 = {:.6}, window {:.1}..{:.1}",
            est.v_hat,
            est.v_theory.unwrap(),
            est.r2,
            est.window.0,
            est.window.1
        );
    }
    Ok(())
}
