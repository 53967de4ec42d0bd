//! Config-driven sweep written to a run directory, as the `carshare` binary does.

use carshare_mf::experiment::{parse_config_str, run_experiment};

fn main() -> carshare_mf::Result<()> {
    let config = parse_config_str(
        r#"{
            "kind": "equilibrium",
            "model": "reservation_finite",
            "lambda": 1.0,
            "mu": [0.5, 1.0, 2.0],
            "U": 0.5,
            "capacity": [1, 2]
        }"#,
    )?;
    let out = std::env::temp_dir().join("carshare-example-runs");
    for record in run_experiment(&config, &out)? {
        println!("{}", record.dir.display());
    }
    Ok(())
}
