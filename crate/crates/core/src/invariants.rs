//! Structural checks every schedule should pass: mass preservation of the
//! closed `r = 1` operators, nested holes, monotone multipliers, equivariance
//! and conformality residuals, and the Lasota–Yorke variation bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::evt::ThresholdSchedule;
use crate::maps::HoleSpec;
use crate::report::{Row, Table};
use crate::thermo::{self, ThermoConfig};
use crate::transfer::{choose_grid, dot, lasota_yorke_diagnostic, HoleLevel, OperatorPath};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantOptions {
    /// Residual tolerance for equivariance and conformality, relative.
    pub tol: f64,
    /// Largest grid used for the Lasota–Yorke sweep over basis vectors.
    pub ly_cells: usize,
    /// Fibers checked by the Lasota–Yorke sweep.
    pub ly_fibers: usize,
    pub n_prime: usize,
    pub seed: u64,
}

impl Default for InvariantOptions {
    fn default() -> Self {
        Self { tol: 1e-9, ly_cells: 512, ly_fibers: 3, n_prime: 1, seed: 0 }
    }
}

fn probes(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}

/// Runs every check over fibers `[a, b]` of `schedule`.
pub fn invariant_suite(schedule: &ThresholdSchedule, a: i64, b: i64, opts: &InvariantOptions, cfg: &ThermoConfig) -> Result<Table, Error> {
    let mut t = Table::new("invariants");
    t.warnings.extend(schedule.warnings.iter().cloned());
    let first = &schedule.levels[0];
    let path = first.ops.path.clone();

    // mass: column sums of the r = 1 matrices are 1 for every fiber
    let ops1 = OperatorPath::new(path.clone(), first.ops.n, 1.0)?;
    let fs = probes(ops1.n, 3, opts.seed);
    let mut mass = 0.0f64;
    for k in a..=b {
        for f in &fs {
            let g = ops1.matrix(k).apply(f);
            let (before, after): (f64, f64) = (f.iter().sum(), g.iter().sum());
            mass = mass.max((after - before).abs() / before);
        }
    }
    t.push(Row::check("mass_preservation", mass, 1e-12, mass <= 1e-12));

    let nested = schedule.nesting_violation.is_none();
    t.push(Row::check("hole_nesting", if nested { 0.0 } else { 1.0 }, 0.0, nested));
    if let Some((k, n)) = schedule.nesting_violation {
        t.warnings.push(format!("hole at N = {n} not inside the previous level's hole on fiber {k}"));
    }

    // multipliers: λ_ε ≤ λ_0 per fiber, averaged log λ_ε increasing in N
    let mut over = 0.0f64;
    let mut averages = Vec::new();
    let (mut equiv, mut conf) = (0.0f64, 0.0f64);
    for level in &schedule.levels {
        let series = thermo::multiplier_series(&level.ops, Some(&level.holes), a, b, cfg)?;
        for (c, o) in series.log_closed.iter().zip(&series.log_open) {
            over = over.max(o - c);
        }
        averages.push(series.log_open.iter().sum::<f64>() / series.log_open.len() as f64);
        equiv = equiv.max(series.max_equivariance);
        conf = conf.max(series.max_conformality);
        let closed = thermo::closed_window(&level.ops, a, b, cfg)?;
        let fs = probes(level.ops.n, 2, opts.seed + 1);
        for k in a..=b {
            for f in &fs {
                let lhs = dot(closed.nu(k + 1), &level.ops.matrix(k).apply(f));
                let rhs = closed.lambda(k) * dot(closed.nu(k), f);
                conf = conf.max((lhs - rhs).abs() / rhs.abs().max(1e-300));
            }
        }
    }
    let drop = averages.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-12;
    t.push(Row::check("lambda_open_below_closed", over, slack, over <= slack));
    t.push(Row::check("lambda_monotone_in_level", drop.max(0.0), slack, averages.len() < 2 || drop <= slack));
    t.push(Row::check("equivariance_residual", equiv, opts.tol, equiv <= opts.tol));
    t.push(Row::check("conformality_residual", conf, opts.tol, conf <= opts.tol));

    // Lasota–Yorke on a coarse grid, closed and at the largest hole
    let mut points = Vec::new();
    for k in a..=b {
        points.extend(path.map(k).grid_points());
    }
    let coarse = choose_grid(&points, opts.ly_cells.min(first.ops.n), opts.ly_cells.max(first.ops.n));
    let n = if coarse.aligned && coarse.n <= opts.ly_cells.max(64) { coarse.n } else { opts.ly_cells };
    let ly_ops = OperatorPath::new(path.clone(), n, first.ops.r)?;
    let specs: Vec<HoleSpec> = first.holes.specs.clone();
    let ly_holes = HoleLevel::new(first.holes.label, first.holes.back, specs, n);
    let (mut worst_ratio, mut worst_bound) = (0.0f64, f64::INFINITY);
    let mut ly_ok = true;
    for k in (a..=b).take(opts.ly_fibers) {
        for holes in [None, Some(&ly_holes)] {
            let ly = lasota_yorke_diagnostic(&ly_ops, holes, k, opts.n_prime)?;
            if ly.empirical / ly.bound > worst_ratio / worst_bound || worst_bound.is_infinite() {
                worst_ratio = ly.empirical;
                worst_bound = ly.bound;
            }
            ly_ok &= ly.empirical <= ly.bound + 1e-12;
        }
    }
    t.push(Row::check("lasota_yorke", worst_ratio, worst_bound, ly_ok));
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evt::{solve_thresholds, ThresholdOptions};
    use std::sync::Arc;

    #[test]
    fn example1_suite_is_green() {
        let cfg = crate::presets::example1();
        let d = cfg.driving().unwrap();
        let path = Arc::new(crate::driving::sample_fiber_path(&d, 1, 60, 70).unwrap());
        let s = solve_thresholds(path, &[100.0, 1000.0], &ThresholdOptions::default()).unwrap();
        let t = invariant_suite(&s, 0, 9, &InvariantOptions::default(), &ThermoConfig::default()).unwrap();
        assert!(t.passed(), "{:#?}", t.failures());
    }
}
