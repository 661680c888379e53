//! Running a scenario config from code instead of the `csde` binary.

use contractive_sde::cli::{parse_config, run_scenario, RunOptions};

const CONFIG: &str = r#"
scenario_kind = "track_ou_sisc"
n_paths = 1000
master_seed = 12

[system]
name = "linear_tracker"
c = 2.0
sigma = 0.2

[grid]
horizon = 10.0

[input]
theta = { kind = "sine", amplitude = 1.0, omega = 1.0 }

[noise]
sigma_xi = 0.3
"#;

fn main() -> contractive_sde::Result<()> {
    let cfg = parse_config(CONFIG)?;
    let out = std::env::temp_dir().join("csde-example");
    let outcome = run_scenario(
        &cfg,
        &RunOptions {
            out: Some(out),
            ..Default::default()
        },
    )?;
    println!("wrote {:?}", outcome.files);
    if let Some(v) = outcome.verdict {
        println!("holds={} alpha*={:?} tail={:?}", v.holds, v.alpha_opt, v.tail.map(|t| t.holds));
    }
    Ok(())
}
