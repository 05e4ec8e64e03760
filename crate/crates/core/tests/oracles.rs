//! Hand-derived extremal indices for Example 1 at slope 3/2 with scalings `t ∈ {1, 2}`.
//!
//! Near the fixed point the hole at fiber `j` is `|x - 1/2| < t_j w` and
//! distances grow by 3/2 per step, so
//! `q̂^(0) = min(t_{k-1}/t_k, 2/3)` and
//! `q̂^(1) = [min(t_{k-2}, t_k/(9/4)) - t_{k-1}/(3/2)]_+ / t_k`.
//! `q̂^(1)` is nonzero only on a `1 → 2` step, where it equals `(8/9 - 2/3)/2 = 1/9`.
//! Three-step returns would need `t_k > 9/4`. Hence `θ = 7/18` after a `1 → 2`
//! step and `θ = 1/3` otherwise.

use quenched::driving::ParamExpr;
use quenched::maps::MapFamily;
use quenched::{pipeline, presets};

const AFTER_RISE: f64 = 7.0 / 18.0;
const OTHERWISE: f64 = 1.0 / 3.0;

#[test]
fn slope_three_halves_with_scalings() {
    let mut cfg = presets::example1_random_scaling();
    cfg.map = MapFamily::Example1 { s: ParamExpr::Const(1.5) };
    cfg.fibers = [0, 39];
    cfg.closed_form = None;
    let run = pipeline::run_theta(&cfg).unwrap();
    let path = &run.env.path;
    let finest = run.report.ladder.len() - 1;
    let (mut rises, mut others) = (0, 0);
    for f in &run.report.fibers {
        let rise = path.params(f.k - 1).scaling == 1.0 && path.params(f.k).scaling == 2.0;
        let (expected, q1) = if rise { (AFTER_RISE, 1.0 / 9.0) } else { (OTHERWISE, 0.0) };
        if rise { rises += 1 } else { others += 1 }
        assert!((f.limit.value - expected).abs() < 1e-2, "fiber {}: θ {} vs {expected}", f.k, f.limit.value);
        assert!((f.qhat[finest][1] - q1).abs() < 5e-3, "fiber {}: q̂^(1) {} vs {q1}", f.k, f.qhat[finest][1]);
    }
    assert!(rises > 0 && others > 0);
}
