//! Green–Kubo variance and a CLT check for the half-indicator along Example 1 fibers.

use quenched::{limits, pipeline, presets};

fn main() -> Result<(), quenched::Error> {
    let cfg = presets::example1();
    let l = &cfg.limits;
    let n = 1024;
    let ops = pipeline::limit_ops(&cfg, (n + l.lags) as i64, 1024)?;
    let th = cfg.thermo_config();
    let var = limits::variance_estimate(&ops, l.observable, 0, n, l.lags, &th)?;
    println!("σ² = {:.5} (finite-n {:.5})", var.sigma2, var.finite_n);
    let clt = limits::clt_check(&ops, l.observable, 0, n, 20_000, l.lags, 0.02, cfg.seed, &th)?;
    println!("direct {:.5} ± {:.5}, KS {:.4}", clt.direct, clt.direct_se, clt.ks);
    Ok(())
}
