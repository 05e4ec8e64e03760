//! Non-exceedance probabilities along the ladder against `exp(-tθ)` with `t = 1`, `θ = 1/2`.

use quenched::{pipeline, presets};

fn main() -> Result<(), quenched::Error> {
    let cfg = presets::example1();
    let (_, rows) = pipeline::run_gumbel(&cfg, 0.5)?;
    println!("{:>8} {:>10} {:>10} {:>10} {:>10}", "N", "ν-form", "μ-form", "λ-ratio", "target");
    for r in &rows {
        println!("{:>8} {:>10.6} {:>10.6} {:>10.6} {:>10.6}", r.big_n, r.nu_survivor, r.mu_survivor, r.lambda_ratio, r.target);
    }
    Ok(())
}
