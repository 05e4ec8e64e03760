//! Standing assumptions on random open interval maps, checked on a sampled window.
//!
//! Weight products `g^(n)` and iterates `L^n_ε 1` are computed exactly as step
//! functions with arbitrary breakpoints, independently of any grid.

use crate::driving::FiberPath;
use crate::maps::{covers_unit, merge_intervals, HoleSpec, PiecewiseAffineMap};
use crate::report::{Row, Table};
use crate::transfer::{HoleLevel, OperatorPath};

const BREAK_TOL: f64 = 1e-14;

/// Right-continuous step function on `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFn {
    /// `0 = b_0 < b_1 < … < b_m = 1`.
    pub breaks: Vec<f64>,
    /// Value on `[b_i, b_{i+1})`.
    pub values: Vec<f64>,
}

impl StepFn {
    pub fn constant(c: f64) -> Self {
        Self { breaks: vec![0.0, 1.0], values: vec![c] }
    }

    fn from_points(mut pts: Vec<f64>, eval: impl Fn(f64) -> f64) -> Self {
        pts.push(0.0);
        pts.push(1.0);
        pts.retain(|x| (0.0..=1.0).contains(x));
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() <= BREAK_TOL);
        let values = pts.windows(2).map(|w| eval(0.5 * (w[0] + w[1]))).collect();
        Self { breaks: pts, values }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.breaks.partition_point(|&b| b <= x).clamp(1, self.values.len()) - 1;
        self.values[i]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn weight(slope: f64, r: f64) -> f64 {
    slope.abs().powf(-r)
}

/// `L_ε f` for a step function `f`.
pub fn transfer_step(map: &PiecewiseAffineMap, r: f64, hole: &HoleSpec, f: &StepFn) -> StepFn {
    let mut pts = Vec::new();
    for b in &map.branches {
        let (a, c) = b.image();
        pts.push(a);
        pts.push(c);
        for &x in f.breaks.iter().chain(hole.intervals.iter().flat_map(|iv| [&iv.0, &iv.1])) {
            if x > b.lo && x < b.hi {
                pts.push(b.eval(x));
            }
        }
    }
    StepFn::from_points(pts, |x| {
        map.preimages(x)
            .into_iter()
            .filter(|(y, _)| !hole.contains(*y))
            .map(|(y, i)| weight(map.branches[i].slope, r) * f.eval(y))
            .sum()
    })
}

/// `g_ε · (f ∘ T)` for a step function `f`.
pub fn pullback_weight(map: &PiecewiseAffineMap, r: f64, hole: &HoleSpec, f: &StepFn) -> StepFn {
    let mut pts: Vec<f64> = map.branches.iter().map(|b| b.lo).collect();
    pts.extend(hole.intervals.iter().flat_map(|&(a, b)| [a, b]));
    for &y in &f.breaks {
        pts.extend(map.preimages(y).into_iter().map(|p| p.0));
    }
    StepFn::from_points(pts, |x| {
        if hole.contains(x) {
            0.0
        } else {
            weight(map.derivative(x), r) * f.eval(map.eval(x))
        }
    })
}

/// `sup g^(n)` along the cocycle from fiber `k`, open when `holes` is given.
pub fn sup_weight_product(ops: &OperatorPath, holes: Option<&HoleLevel>, k: i64, n: usize) -> f64 {
    weight_product(&ops.path, ops.r, holes, k, n).max()
}

fn weight_product(path: &FiberPath, r: f64, holes: Option<&HoleLevel>, k: i64, n: usize) -> StepFn {
    let empty = HoleSpec::empty();
    let mut f = StepFn::constant(1.0);
    for j in (0..n as i64).rev() {
        let hole = holes.map_or(&empty, |h| h.spec(k + j));
        f = pullback_weight(path.map(k + j), r, hole, &f);
    }
    f
}

/// `L^n_ε 1` from fiber `k`.
pub fn iterate_one(path: &FiberPath, r: f64, holes: Option<&HoleLevel>, k: i64, n: usize) -> StepFn {
    let empty = HoleSpec::empty();
    let mut f = StepFn::constant(1.0);
    for j in 0..n as i64 {
        let hole = holes.map_or(&empty, |h| h.spec(k + j));
        f = transfer_step(path.map(k + j), r, hole, &f);
    }
    f
}

/// Image of a union of intervals.
pub fn image_intervals(map: &PiecewiseAffineMap, iv: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(a, c) in iv {
        for b in &map.branches {
            let lo = a.max(b.lo);
            let hi = c.min(b.hi);
            if hi > lo {
                let (y0, y1) = (b.eval(lo), b.eval(hi));
                out.push((y0.min(y1), y0.max(y1)));
            }
        }
    }
    merge_intervals(&out)
}

/// Steps until the images of `iv` from fiber `k` cover `[0,1]`, up to `cap`.
pub fn covering_time(path: &FiberPath, k: i64, iv: &[(f64, f64)], cap: usize) -> Option<usize> {
    let mut cur = merge_intervals(iv);
    for step in 0..=cap {
        if covers_unit(&cur) {
            return Some(step);
        }
        let j = k + step as i64;
        if !path.contains(j) {
            return None;
        }
        cur = image_intervals(path.map(j), &cur);
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub name: &'static str,
    pub pass: bool,
    /// Witness on the left of the inequality (or the measured quantity).
    pub lhs: f64,
    /// Witness on the right (or the bound).
    pub rhs: f64,
    pub fiber: Option<i64>,
    pub level: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct AssumptionReport {
    pub results: Vec<ConditionResult>,
    /// Smallest `n'` for which the contraction condition holds, if any.
    pub n_prime: Option<usize>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn get(&self, name: &str) -> Option<&ConditionResult> {
        self.results.iter().find(|r| r.name == name)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new("assumptions");
        for c in &self.results {
            let mut row = Row::check(c.name, c.lhs, c.rhs, c.pass);
            row.fiber = c.fiber;
            row.level = c.level;
            t.push(row);
            if !c.pass {
                t.warnings.push(format!("{} fails: {}", c.name, c.detail));
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionOptions {
    pub weight_exponent: f64,
    /// Largest `n'` tried for the contraction condition.
    pub max_n_prime: usize,
    /// Cells used as test intervals for the covering condition.
    pub covering_cells: usize,
    /// Largest covering time accepted.
    pub covering_cap: usize,
    /// Start fibers tried for the covering conditions.
    pub covering_fibers: usize,
}

impl Default for AssumptionOptions {
    fn default() -> Self {
        Self { weight_exponent: 1.0, max_n_prime: 6, covering_cells: 128, covering_cap: 64, covering_fibers: 8 }
    }
}

/// Check (E1)–(E9), (A) and (EX) over fibers `[a, b]` with hole levels ordered
/// from the largest hole to the smallest.
pub fn verify_assumptions(path: &FiberPath, a: i64, b: i64, levels: &[HoleLevel], opts: &AssumptionOptions) -> AssumptionReport {
    let r = opts.weight_exponent;
    let fibers = a..=b;
    let mut out = AssumptionReport::default();
    let mut push = |name, pass, lhs, rhs, fiber, level, detail: String| {
        out.results.push(ConditionResult { name, pass, lhs, rhs, fiber, level, detail });
    };

    // E1: bounded derivative and branch count
    let (mut sup_d, mut sup_count) = (0.0f64, 0usize);
    let mut surjective = true;
    let mut bad_surj = None;
    for k in fibers.clone() {
        let m = path.map(k);
        sup_d = sup_d.max(m.max_abs_slope());
        sup_count = sup_count.max(m.branches.len());
        if !m.is_surjective() && surjective {
            surjective = false;
            bad_surj = Some(k);
        }
    }
    push("E1", surjective && sup_d.is_finite(), sup_d, sup_count as f64, bad_surj, None, "sup |T'| and max branch count".into());

    // E2 / E3: weight bounds
    let sup_g = fibers.clone().flat_map(|k| path.map(k).branches.iter().map(|b| weight(b.slope, r)).collect::<Vec<_>>()).fold(0.0, f64::max);
    let inf_g = fibers.clone().flat_map(|k| path.map(k).branches.iter().map(|b| weight(b.slope, r)).collect::<Vec<_>>()).fold(f64::INFINITY, f64::min);
    push("E2", sup_g.is_finite(), sup_g, f64::INFINITY, None, None, "sup g".into());
    push("E3", inf_g > 0.0, inf_g, 0.0, None, None, "inf g".into());

    // E4: every grid cell covers [0,1] within the cap
    let mut worst = 0usize;
    let mut e4_fail = None;
    'e4: for k in fibers.clone().take(opts.covering_fibers) {
        for i in 0..opts.covering_cells {
            let cell = (i as f64 / opts.covering_cells as f64, (i + 1) as f64 / opts.covering_cells as f64);
            match covering_time(path, k, &[cell], opts.covering_cap) {
                Some(t) => worst = worst.max(t),
                None => {
                    e4_fail = Some(k);
                    break 'e4;
                }
            }
        }
    }
    push("E4", e4_fail.is_none(), worst as f64, opts.covering_cap as f64, e4_fail, None, format!("covering time of cells of width 1/{}", opts.covering_cells));

    // A: nesting
    let mut nest = None;
    for w in levels.windows(2) {
        if let Some(k) = fibers.clone().find(|&k| !w[1].spec(k).is_subset_of(w[0].spec(k))) {
            nest = Some((k, w[1].label));
            break;
        }
    }
    push("A", nest.is_none(), 0.0, 0.0, nest.map(|n| n.0), nest.map(|n| n.1), "holes shrink along the ladder".into());

    // E5 / E6
    let comps = levels.iter().flat_map(|l| fibers.clone().map(move |k| l.spec(k).components())).max().unwrap_or(0);
    push("E5", comps <= 2 * sup_count.max(1), comps as f64, (2 * sup_count.max(1)) as f64, None, None, "max hole components".into());
    let sup_leb: Vec<f64> = levels.iter().map(|l| fibers.clone().map(|k| l.spec(k).leb()).fold(0.0, f64::max)).collect();
    let shrinking = sup_leb.windows(2).all(|w| w[1] <= w[0]) && sup_leb.last().is_some_and(|&x| x < 1.0);
    push("E6", shrinking, sup_leb.last().copied().unwrap_or(0.0), sup_leb.first().copied().unwrap_or(0.0), None, None, "sup Leb(H) along the ladder".into());

    // EX and E7 per level
    for l in levels {
        let ex = fibers.clone().find(|&k| {
            let h = l.spec(k);
            !path.map(k).branches.iter().any(|b| b.is_full() && !h.intervals.iter().any(|&(c, d)| c <= b.hi && d >= b.lo))
        });
        push("EX", ex.is_none(), 0.0, 0.0, ex, Some(l.label), "a full branch avoids the hole".into());
        let e7 = fibers.clone().find(|&k| !covers_unit(&image_intervals(path.map(k), &l.spec(k).complement())));
        push("E7", e7.is_none(), 0.0, 0.0, e7, Some(l.label), "T(J) = [0,1]".into());
    }

    // E8: smallest n' with 9 sup g^(n') < inf L^n'_ε 1
    let largest = levels.first();
    let mut e8 = None;
    let mut witness = (f64::NAN, f64::NAN);
    for np in 1..=opts.max_n_prime {
        if !path.contains(b + np as i64 - 1) {
            break;
        }
        let lhs = 9.0 * fibers.clone().map(|k| weight_product(path, r, None, k, np).max()).fold(0.0, f64::max);
        let rhs = fibers.clone().map(|k| iterate_one(path, r, largest, k, np).min()).fold(f64::INFINITY, f64::min);
        witness = (lhs, rhs);
        if lhs < rhs {
            e8 = Some(np);
            break;
        }
    }
    out.n_prime = e8;
    push("E8", e8.is_some(), witness.0, witness.1, None, largest.map(|l| l.label), format!("n' = {:?}", e8));

    // E9: surviving monotonicity pieces of T^n' cover within the cap
    let np = e8.unwrap_or(1);
    let mut e9_worst = 0usize;
    let mut e9_fail = None;
    if let Some(l) = levels.last() {
        'e9: for k in fibers.clone().take(opts.covering_fibers) {
            for piece in surviving_pieces(path, l, k, np) {
                match covering_time(path, k, &[piece], opts.covering_cap) {
                    Some(t) => e9_worst = e9_worst.max(t),
                    None => {
                        e9_fail = Some(k);
                        break 'e9;
                    }
                }
            }
        }
    }
    push("E9", e9_fail.is_none(), e9_worst as f64, opts.covering_cap as f64, e9_fail, levels.last().map(|l| l.label), format!("open covering time at n' = {np}"));
    out
}

/// Monotonicity pieces of `T^n` from fiber `k` that survive `n` steps.
pub fn surviving_pieces(path: &FiberPath, holes: &HoleLevel, k: i64, n: usize) -> Vec<(f64, f64)> {
    let mut pts: Vec<f64> = vec![];
    for j in (0..n as i64).rev() {
        let m = path.map(k + j);
        let mut next: Vec<f64> = m.critical_points();
        next.extend(holes.spec(k + j).intervals.iter().flat_map(|&(a, b)| [a, b]));
        for &y in &pts {
            next.extend(m.preimages(y).into_iter().map(|p| p.0));
        }
        pts = next;
    }
    let part = StepFn::from_points(pts, |_| 0.0);
    part.breaks
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|&(a, b)| {
            let mut x = 0.5 * (a + b);
            for j in 0..n as i64 {
                if holes.spec(k + j).contains(x) {
                    return false;
                }
                x = path.map(k + j).eval(x);
            }
            true
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{make_beta_map, make_example1_map};

    #[test]
    fn transfer_of_one_is_branch_count() {
        let t = make_beta_map(3.0, 0.0).unwrap();
        let f = transfer_step(&t, 0.0, &HoleSpec::empty(), &StepFn::constant(1.0));
        assert!(f.values.iter().all(|v| (v - 3.0).abs() < 1e-12));
        let f = transfer_step(&t, 1.0, &HoleSpec::empty(), &StepFn::constant(1.0));
        assert!(f.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn open_transfer_drops_hole_branch() {
        let t = make_beta_map(3.0, 0.0).unwrap();
        let h = HoleSpec::new(vec![(0.1, 0.2)]).unwrap();
        let f = transfer_step(&t, 1.0, &h, &StepFn::constant(1.0));
        // preimages of (0.3, 0.6) in the first branch fall in the hole
        assert!((f.eval(0.45) - 2.0 / 3.0).abs() < 1e-12);
        assert!((f.eval(0.9) - 1.0).abs() < 1e-12);
        assert!((f.min() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn example1_weight_products() {
        let t = make_example1_map(2.0).unwrap();
        let mut f = StepFn::constant(1.0);
        for _ in 0..3 {
            f = pullback_weight(&t, 1.0, &HoleSpec::empty(), &f);
        }
        // the central branch fixes 1/2 with slope 2
        assert!((f.max() - 0.125).abs() < 1e-12);
        assert!((f.eval(0.5) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn covering_of_tripling() {
        let t = make_beta_map(3.0, 0.0).unwrap();
        let img = image_intervals(&t, &[(0.0, 0.1)]);
        assert_eq!(img, vec![(0.0, 0.30000000000000004)]);
        assert!(covers_unit(&image_intervals(&t, &[(0.0, 1.0 / 3.0)])));
    }
}
