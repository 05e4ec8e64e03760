//! One test per acceptance criterion. Each prints a single
//! `criterion NN <name>: PASS|FAIL <detail>` line before asserting, visible without `--nocapture`.

use std::io::Write;
use std::time::Instant;

use quenched::config::{ExperimentConfig, LimitObservable};
use quenched::driving::ParamExpr;
use quenched::evt::{self, ThresholdSchedule};
use quenched::invariants::{invariant_suite, InvariantOptions};
use quenched::maps::MapFamily;
use quenched::perturb::{matrix_check, random_positive_cocycle, MaskRule};
use quenched::thermo::closed_window;
use quenched::transfer::{choose_grid, dot};
use quenched::{limits, pipeline, presets};

/// Written to the raw stdout handle so the line survives libtest's output capture.
fn verdict(id: u8, name: &str, pass: bool, detail: String) {
    let line = format!("criterion {id:02} {name}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
}

fn schedule_for(cfg: &ExperimentConfig) -> ThresholdSchedule {
    let env = pipeline::environment(cfg, 0).unwrap();
    pipeline::schedule(cfg, &env).unwrap()
}

#[test]
fn criterion_01_matrix_oracle() {
    let start = Instant::now();
    let mut failed = Vec::new();
    let (mut fibers, mut degenerate) = (0, 0);
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let c = random_positive_cocycle(5, seed, (300, 300), &[1e-2, 1e-3, 1e-4], MaskRule::CoordinateWithGaps { period: 4 }).unwrap();
        let rep = matrix_check(&c, &[0, 1, 2, 3, 5], 12, 200, 1e-8).unwrap();
        for f in &rep.fibers {
            fibers += 1;
            if f.degenerate {
                degenerate += 1;
                worst = worst.max(f.lambda_gap);
            } else {
                worst = worst.max(f.residual);
            }
        }
        if !rep.passed() {
            failed.push(seed);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failed.is_empty() && secs < 30.0;
    verdict(1, "matrix oracle", pass, format!("{fibers} fibers ({degenerate} degenerate), worst residual {worst:.1e}, failing seeds {failed:?}, {secs:.1}s"));
    assert!(pass);
}

/// `ν_{k+1}((L_0 - L_ε) φ_k)` against `λ_k μ_k(H_k)`, with `μ_k(H_k)` taken from
/// the threshold solver's invariant measures.
fn delta_identity(cfg: &ExperimentConfig, a: i64, b: i64) -> (f64, bool, usize) {
    let s = schedule_for(cfg);
    let th = cfg.thermo_config();
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for level in &s.levels {
        let ops = &level.ops;
        let mut points = Vec::new();
        for k in ops.lo()..=ops.hi() {
            points.extend(ops.path.map(k).grid_points());
        }
        exact &= choose_grid(&points, ops.n, ops.n).aligned;
        let w = closed_window(ops, a, b + 1, &th).unwrap();
        for k in a..=b {
            let removed = ops.matrix(k).apply(&level.holes.mask(k).hole_part(w.phi(k)));
            let pairing = dot(w.nu(k + 1), &removed);
            worst = worst.max((pairing - w.lambda(k) * level.mu_hole(k)).abs());
        }
    }
    (worst, exact, s.levels.len())
}

#[test]
fn criterion_02_delta_identity() {
    let mut ex1 = presets::example1();
    ex1.fibers = [0, 49];
    let (w1, exact1, l1) = delta_identity(&ex1, 0, 49);

    // rational shift so every branch endpoint sits on the grid
    let mut ex4 = presets::example4();
    ex4.fibers = [0, 49];
    ex4.map = MapFamily::Beta { beta: ParamExpr::PerSymbol { per_symbol: vec![3.0, 4.0, 5.0, 6.0] }, shift: ParamExpr::Const(0.25) };
    ex4.ladder = vec![1e2, 3e2, 1e3];
    ex4.grid.align = false;
    ex4.grid.min_cells = 240 * 64;
    ex4.grid.max_cells = 240 * 64;
    let (w4, exact4, l4) = delta_identity(&ex4, 0, 49);

    let pass = w1 <= 1e-10 && w4 <= 1e-10 && exact1 && exact4 && l1 == 3 && l4 == 3;
    verdict(2, "delta identity", pass, format!("example 1: {w1:.1e} (exact grid {exact1}), example 4 with shift 1/4: {w4:.1e} (exact grid {exact4}); 50 fibers, 3 hole sizes"));
    assert!(pass);
}

/// Weighted `Σ_{k ≤ k_max} q̂` on fibers `[0, 19]` of the coarsest level,
/// doubling `k_max` from 12 until the unassigned mass drops below `1e-3`.
fn return_mass(cfg: &ExperimentConfig) -> (f64, f64, usize) {
    let mut cfg = cfg.clone();
    cfg.fibers = [0, 19];
    cfg.ladder = vec![10.0];
    cfg.theta.k_cap = 256;
    let s = schedule_for(&cfg);
    let level = &s.levels[0];
    let weighted = |k_max: usize| {
        let q = evt::qhat(level, 0, 19, k_max, &cfg.thermo_config()).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for (m, row) in q.mu_hole.iter().zip(&q.operator) {
            num += m * row.iter().sum::<f64>();
            den += m;
        }
        num / den
    };
    let at_12 = weighted(12);
    let mut k_max = 12;
    let mut sum = at_12;
    while 1.0 - sum >= 1e-3 && k_max < cfg.theta.k_cap {
        k_max *= 2;
        sum = weighted(k_max);
    }
    (at_12, sum, k_max)
}

#[test]
fn criterion_03_return_mass_is_one() {
    let mut detail = Vec::new();
    let mut pass = true;
    for cfg in [presets::example1(), presets::example1_random_slope()] {
        let (at_12, sum, k_max) = return_mass(&cfg);
        pass &= (sum - 1.0).abs() <= 1e-3;
        detail.push(format!("{}: {sum:.6} at k_max {k_max} (from {at_12:.4} at 12)", cfg.name));
    }
    verdict(3, "return mass", pass, format!("N = 10, {}", detail.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_04_example1_extremal_index() {
    let mut detail = Vec::new();
    let mut pass = true;
    for (cfg, expected, tol) in [(presets::example1(), 0.5, 1e-2), (presets::example1_random_slope(), 7.0 / 12.0, 1.5e-2)] {
        let start = Instant::now();
        let run = pipeline::run_theta(&cfg).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let theta = run.report.theta_mean;
        pass &= (theta - expected).abs() <= tol && secs < 120.0;
        detail.push(format!("{}: θ {theta:.5} vs {expected:.5} ({secs:.1}s)", cfg.name));
    }
    verdict(4, "example 1 extremal index", pass, detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_05_random_scaling_per_fiber() {
    let mut cfg = presets::example1_random_scaling();
    cfg.fibers = [0, 99];
    let run = pipeline::run_theta(&cfg).unwrap();
    let path = &run.env.path;
    let mut worst: f64 = 0.0;
    for f in &run.report.fibers {
        let ratio = path.params(f.k - 1).scaling / path.params(f.k).scaling;
        let slope = path.map(f.k - 1).derivative(0.5).abs();
        let formula = 1.0 - ratio.min(1.0 / slope);
        worst = worst.max((f.limit.value - formula).abs());
    }
    let n = run.report.fibers.len();
    let pass = n == 100 && worst <= 1e-2;
    verdict(5, "random scaling per fiber", pass, format!("{n} fibers, worst |θ - formula| {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_06_example3_periodic() {
    let mut cfg = presets::example3();
    cfg.fibers = [0, 29];
    let run = pipeline::run_theta(&cfg).unwrap();
    let expected = 1.0 - 1.0 / 9.0;
    let theta = run.report.theta_mean;
    let worst = run.report.fibers.iter().map(|f| (f.limit.value - expected).abs()).fold(0.0, f64::max);
    let pass = (theta - expected).abs() <= 1e-2 && worst <= 1e-2;
    verdict(6, "example 3 periodic", pass, format!("θ {theta:.5} vs 8/9, worst fiber {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_07_example4_aperiodic() {
    let mut cfg = presets::example4();
    cfg.fibers = [0, 29];
    let run = pipeline::run_theta(&cfg).unwrap();
    let finest = run.report.ladder.len() - 1;
    let max_q = run.report.fibers.iter().flat_map(|f| f.qhat[finest].iter().take(13).copied()).fold(0.0, f64::max);
    let theta = run.report.theta_mean;
    let pass = max_q < 1e-3 && (theta - 1.0).abs() <= 1e-2;
    verdict(7, "example 4 aperiodic", pass, format!("max q̂ {max_q:.2e} at N = {}, θ {theta:.5}", run.report.ladder[finest]));
    assert!(pass);
}

#[test]
fn criterion_08_gumbel_law() {
    let cfg = presets::example1();
    let (_, rows) = pipeline::run_gumbel(&cfg, 0.5).unwrap();
    let g = rows.iter().find(|g| g.big_n == 1e4).expect("ladder reaches 1e4");
    let rel = (g.nu_survivor - (-0.5f64).exp()).abs() / (-0.5f64).exp();
    let forms_ok = rows.iter().all(|g| g.form_spread() <= g.q_bound);
    let pass = rel <= 0.03 && forms_ok;
    verdict(8, "gumbel law", pass, format!("ν₀ survivor {:.5} vs e^-1/2 (rel {rel:.2e}), form spread {:.2e} within bound {:.2e}", g.nu_survivor, g.form_spread(), g.q_bound));
    assert!(pass);
}

#[test]
fn criterion_09_hitting_law() {
    let cfg = presets::example1();
    let (_, r) = pipeline::run_hitting(&cfg, 0.5).unwrap();
    let pass = r.samples == 100_000 && r.ks < 0.02 && r.survival_pass() && !r.survival.is_empty();
    let surv: Vec<String> = r.survival.iter().map(|s| format!("n={}: {:.4} vs {:.4}", s.steps, s.mc, s.operator)).collect();
    verdict(9, "hitting law", pass, format!("KS {:.4} over {} samples ({} censored); {}", r.ks, r.samples, r.censored, surv.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_10_escape_rates() {
    let cfg = presets::example1();
    let (_, esc) = pipeline::run_escape(&cfg).unwrap();
    let gap = esc.rows.iter().map(|r| (r.decay_fit - r.birkhoff).abs() / r.birkhoff).fold(0.0, f64::max);
    let limit_gap = (esc.extrapolated - 0.5).abs();
    let pass = gap <= 0.01 && limit_gap <= 1e-2;
    verdict(10, "escape rates", pass, format!("worst relative gap {gap:.1e}, R/μ(H) extrapolates to {:.5}", esc.extrapolated));
    assert!(pass);
}

#[test]
fn criterion_11_limit_theorems() {
    let cfg = presets::example1();
    let th = cfg.thermo_config();
    let obs = LimitObservable::HalfIndicator;
    let ops = pipeline::limit_ops(&cfg, 2 * 2048 + 64, 1024).unwrap();
    let clt = limits::clt_check(&ops, obs, 0, 2048, 100_000, 64, 0.01, cfg.seed, &th).unwrap();

    let az_ops = pipeline::limit_ops(&cfg, 4096 + 64, 1024).unwrap();
    let az = limits::azuma_bound_check(&az_ops, obs, 0, &[0.2], &[256, 1024, 4096], 20_000, cfg.seed, &th).unwrap();
    let applied = az.rows.iter().filter(|r| r.applies()).count();

    let l = &cfg.limits;
    let bc_ops = pipeline::limit_ops(&cfg, 1_000_001, 256).unwrap();
    let bc = limits::borel_cantelli_count(&bc_ops, 0, l.bc_center, l.bc_constant, 1.0, 1_000_000, l.bc_orbits, 0.05, cfg.seed, &th).unwrap();

    let pass = clt.ks < 0.01 && az.violations() == 0 && applied > 0 && bc.pass();
    verdict(11, "limit theorems", pass, format!("CLT KS {:.4} (n = 2048, 1e5 samples); Azuma violations {} over {applied} rows past n₀; Borel–Cantelli ratio {:.4}", clt.ks, az.violations(), bc.ratio));
    assert!(pass);
}

#[test]
fn criterion_12_invariant_suite() {
    let start = Instant::now();
    let mut failed = Vec::new();
    for mut cfg in presets::all() {
        cfg.fibers = [0, 19];
        let s = schedule_for(&cfg);
        let t = invariant_suite(&s, 0, 19, &InvariantOptions::default(), &cfg.thermo_config()).unwrap();
        for r in t.failures() {
            failed.push(format!("{}:{}", cfg.name, r.quantity));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failed.is_empty() && secs < 600.0;
    verdict(12, "invariant suite", pass, format!("{} presets, failures {failed:?}, {secs:.1}s", presets::all().len()));
    assert!(pass);
}
