//! Monte Carlo hitting times of the `N = 1000` hole, rescaled by `N`, against `Exp(1/2)`.

use quenched::{pipeline, presets};

fn main() -> Result<(), quenched::Error> {
    let mut cfg = presets::example1();
    cfg.hitting.samples = 20_000;
    let (_, rep) = pipeline::run_hitting(&cfg, 0.5)?;
    println!("samples {} (censored {}), KS {:.4} (tol {})", rep.samples, rep.censored, rep.ks, rep.ks_tol);
    println!("P(τ > N) = {:.4}, target {:.4} ± {:.4}", rep.tail_mc, rep.tail_target, rep.tail_sigma);
    for s in &rep.survival {
        println!("{s:?}");
    }
    Ok(())
}
