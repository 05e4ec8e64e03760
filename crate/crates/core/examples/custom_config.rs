//! Builds an experiment from TOML: Example 1 maps with slopes 2 or 3 chosen by a fair coin.
//! The two-level ladder keeps it fast, so θ is only within about 1e-2 of the closed form.

use quenched::config::ExperimentConfig;
use quenched::pipeline;

const CONFIG: &str = r#"
name = "coin-slopes"
fibers = [0, 39]
ladder = [100.0, 1000.0]
scaling = 1.0

[driving]
kind = "bernoulli"
weights = [0.5, 0.5]

[map]
family = "example1"

[map.s]
per_symbol = [2.0, 3.0]

[observable]
family = "quadratic"
center = 0.5

[closed_form]
kind = "fixed_point"
x0 = 0.5
"#;

fn main() -> Result<(), quenched::Error> {
    let cfg = ExperimentConfig::parse(CONFIG, "inline")?;
    let run = pipeline::run_theta(&cfg)?;
    println!("θ = {:.4}, closed form {:.4}", run.report.theta_mean, run.report.closed_form_mean.unwrap_or(f64::NAN));
    Ok(())
}
