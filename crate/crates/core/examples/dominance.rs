//! Birth-death comparison properties on random ordered arrival profiles.

use carshare_mf::transient::{self, ArrivalProfile, BDState, SuiteOptions};

fn main() -> carshare_mf::Result<()> {
    let report = transient::property_suite(&SuiteOptions::default())?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("serializable")
    );

    // a relaxing arrival rate against its limit
    let n = transient::default_n_max(0.5, 1.0);
    let times: Vec<f64> = (0..=8).map(|i| i as f64 * 5.0).collect();
    let relaxing = ArrivalProfile::Relaxing {
        level: 0.5,
        rate: 0.3,
    };
    for (t, s) in times.iter().zip(transient::evolve(
        &BDState::point(n, 3)?,
        &relaxing,
        1.0,
        &times,
    )?) {
        println!(
            "t = {t:>4}  P(empty) = {:.6}  mean = {:.4}",
            s.p0(),
            s.mean()
        );
    }
    Ok(())
}
