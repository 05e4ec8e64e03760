use proptest::prelude::*;

use quenched::driving::ParamExpr;
use quenched::evt::{check_nesting, StepMeasure};
use quenched::maps::{make_beta_map, make_example1_map, HoleSpec, MapFamily};
use quenched::mc::{ks_statistic, reflect};
use quenched::perturb::{matrix_check, random_positive_cocycle, MaskRule};
use quenched::transfer::{choose_grid, dot, HoleMask, TransferMatrix};
use quenched::{pipeline, presets};

fn any_map() -> impl Strategy<Value = quenched::maps::PiecewiseAffineMap> {
    prop_oneof![
        (2u32..=5).prop_map(|s| make_example1_map(s as f64).unwrap()),
        (1.5f64..2.5).prop_map(|s| make_example1_map(s).unwrap()),
        (2.0f64..6.0, 0.0f64..1.0).prop_map(|(b, sh)| make_beta_map(b, sh).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_operator_preserves_mass(map in any_map(), n in 16usize..400, f in prop::collection::vec(0.0f64..1.0, 400)) {
        let m = TransferMatrix::build(&map, 1.0, n).unwrap();
        let f = &f[..n];
        let before: f64 = f.iter().sum();
        let after: f64 = m.apply(f).iter().sum();
        prop_assert!((before - after).abs() <= 1e-11 * before.max(1.0));
    }

    #[test]
    fn transpose_is_adjoint(map in any_map(), n in 16usize..200, f in prop::collection::vec(-1.0f64..1.0, 200), w in prop::collection::vec(-1.0f64..1.0, 200)) {
        let m = TransferMatrix::build(&map, 1.0, n).unwrap();
        let (f, w) = (&f[..n], &w[..n]);
        let lhs = dot(w, &m.apply(f));
        let rhs = dot(&m.apply_transpose(w), f);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * n as f64);
    }

    #[test]
    fn nested_holes_give_nested_masks(c in 0.05f64..0.95, r in 1e-4f64..0.05, shrink in 0.0f64..1.0, n in 8usize..2048) {
        let outer = HoleSpec::new(vec![(c - r, c + r)]).unwrap();
        let inner = HoleSpec::new(vec![(c - r * shrink.max(1e-3), c + r * shrink.max(1e-3))]).unwrap();
        let (mo, mi) = (HoleMask::new(&outer, n), HoleMask::new(&inner, n));
        prop_assert!(mi.dominates(&mo));
        prop_assert!(mi.leb() <= mo.leb() + 1e-15);
        prop_assert!((mo.leb() - (outer.intervals[0].1 - outer.intervals[0].0)).abs() <= 1e-12);
    }

    #[test]
    fn aligned_grids_contain_every_point(dens in prop::collection::vec((0u64..60, 1u64..60), 1..6), min in 2usize..5000) {
        let points: Vec<f64> = dens.iter().map(|&(p, q)| (p % q) as f64 / q as f64).collect();
        let g = choose_grid(&points, min, 1 << 18);
        if g.aligned {
            for x in points {
                let y = x * g.n as f64;
                prop_assert!((y - y.round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reflection_stays_in_unit_interval(y in -0.999f64..1.999) {
        let x = reflect(y);
        prop_assert!((0.0..1.0).contains(&x));
    }

    #[test]
    fn quantile_inverts_cdf(w in prop::collection::vec(0.01f64..1.0, 2..64), p in 0.0f64..1.0) {
        let total: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|x| x / total).collect();
        let m = StepMeasure::new(&w);
        prop_assert!((m.cdf(m.quantile(p)) - p).abs() < 1e-12);
        prop_assert!(m.cdf(0.3) <= m.cdf(0.7));
    }

    #[test]
    fn ks_distance_is_a_probability(mut xs in prop::collection::vec(0.0f64..1.0, 1..200)) {
        xs.sort_by(f64::total_cmp);
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(d >= 0.5 / xs.len() as f64 - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn matrix_oracle_holds_on_random_cocycles(seed in 0u64..10_000, dim in 2usize..7) {
        let c = random_positive_cocycle(dim, seed, (200, 200), &[1e-2, 1e-3, 1e-4], MaskRule::CoordinateWithGaps { period: 3 }).unwrap();
        let rep = matrix_check(&c, &[0, 1, 2], 10, 150, 1e-8).unwrap();
        prop_assert!(rep.passed());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn qhat_series_is_a_subprobability(seed in 0u64..1000, slopes in prop::sample::subsequence(vec![2.0, 3.0, 4.0], 2)) {
        let mut cfg = presets::example1_random_slope();
        cfg.seed = seed;
        cfg.fibers = [0, 9];
        cfg.ladder = vec![100.0, 1000.0];
        cfg.map = MapFamily::Example1 { s: ParamExpr::PerSymbol { per_symbol: slopes } };
        cfg.closed_form = None;
        let run = pipeline::run_theta(&cfg).unwrap();
        prop_assert!(check_nesting(&run.schedule.levels).is_none());
        prop_assert!(run.report.max_discrepancy < 1e-10);
        for f in &run.report.fibers {
            for row in &f.qhat {
                prop_assert!(row.iter().all(|q| (-1e-12..=1.0 + 1e-12).contains(q)));
                prop_assert!(row.iter().sum::<f64>() <= 1.0 + 1e-9);
            }
        }
        let tr = run.report.truncations();
        prop_assert!(tr.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}
