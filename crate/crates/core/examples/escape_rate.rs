//! Escape rate over hole measure as the holes shrink.

use quenched::{pipeline, presets};

fn main() -> Result<(), quenched::Error> {
    let mut cfg = presets::example1();
    cfg.thermo.escape_horizon = 1000;
    let (_, rep) = pipeline::run_escape(&cfg)?;
    for r in &rep.rows {
        println!("N = {:>7}  decay {:.4e}  multipliers {:.4e}  μ(H) {:.4e}  ratio {:.5}", r.label, r.decay_fit, r.birkhoff, r.hole_measure, r.ratio);
    }
    println!("extrapolated ratio {:.5}", rep.extrapolated);
    Ok(())
}
