//! Piecewise affine interval maps, hole specifications and interval arithmetic.

use serde::{Deserialize, Serialize};

use crate::driving::{FiberState, ParamExpr};
use crate::Error;

const EDGE_TOL: f64 = 1e-13;

/// One affine piece `x -> slope*x + intercept` on `[lo, hi)`. Images always lie in `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub intercept: f64,
    /// Piece created by reducing a map mod 1.
    pub wraps: bool,
}

impl Branch {
    pub fn eval(&self, x: f64) -> f64 {
        (self.slope * x + self.intercept).clamp(0.0, 1.0)
    }

    /// Closed image interval `[min, max]`.
    pub fn image(&self) -> (f64, f64) {
        let a = self.eval(self.lo);
        let b = self.eval(self.hi);
        (a.min(b), a.max(b))
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_full(&self) -> bool {
        let (a, b) = self.image();
        a <= EDGE_TOL && b >= 1.0 - EDGE_TOL
    }

    pub fn preimage(&self, y: f64) -> f64 {
        (y - self.intercept) / self.slope
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseAffineMap {
    pub branches: Vec<Branch>,
    pub label: String,
}

impl PiecewiseAffineMap {
    pub fn new(branches: Vec<Branch>, label: impl Into<String>) -> Result<Self, Error> {
        if branches.is_empty() {
            return Err(Error::InvalidInput("map needs at least one branch".into()));
        }
        let mut edge = 0.0;
        for b in &branches {
            if (b.lo - edge).abs() > 1e-12 || !(b.hi > b.lo) || b.slope == 0.0 || !b.slope.is_finite() {
                return Err(Error::InvalidInput(format!("branches do not partition [0,1) at {edge}")));
            }
            let y0 = b.slope * b.lo + b.intercept;
            let y1 = b.slope * b.hi + b.intercept;
            if y0.min(y1) < -1e-12 || y0.max(y1) > 1.0 + 1e-12 {
                return Err(Error::InvalidInput(format!("branch on [{}, {}) leaves [0,1]", b.lo, b.hi)));
            }
            edge = b.hi;
        }
        if (edge - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("branches do not reach 1".into()));
        }
        Ok(Self { branches, label: label.into() })
    }

    pub fn branch_index(&self, x: f64) -> usize {
        let last = self.branches.len() - 1;
        self.branches.iter().position(|b| x < b.hi).unwrap_or(last).min(last)
    }

    /// Evaluation with the left-closed tie-break at branch boundaries.
    pub fn eval(&self, x: f64) -> f64 {
        self.branches[self.branch_index(x)].eval(x)
    }

    /// `(left limit, right limit)` of `T` at `x`.
    pub fn one_sided(&self, x: f64) -> (f64, f64) {
        let right = self.eval(x);
        let left = match self.branches.iter().position(|b| b.hi >= x && b.lo < x) {
            Some(i) => self.branches[i].eval(x),
            None => right,
        };
        (left, right)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.branches[self.branch_index(x)].slope
    }

    /// All `y` with `T(y) = x`, one per branch whose image contains `x`.
    pub fn preimages(&self, x: f64) -> Vec<(f64, usize)> {
        let last = self.branches.len() - 1;
        let mut out = Vec::new();
        for (i, b) in self.branches.iter().enumerate() {
            let y = b.preimage(x);
            let inside = y >= b.lo - EDGE_TOL && (y < b.hi - EDGE_TOL || (i == last && y <= b.hi + EDGE_TOL));
            if inside {
                out.push((y.clamp(b.lo, b.hi), i));
            }
        }
        out
    }

    pub fn is_surjective(&self) -> bool {
        let images: Vec<(f64, f64)> = self.branches.iter().map(|b| b.image()).collect();
        covers_unit(&images)
    }

    /// Interior branch endpoints (the monotonicity partition).
    pub fn critical_points(&self) -> Vec<f64> {
        self.branches.iter().skip(1).map(|b| b.lo).collect()
    }

    /// Endpoints and image endpoints; used to choose aligned grids.
    pub fn grid_points(&self) -> Vec<f64> {
        let mut pts = Vec::new();
        for b in &self.branches {
            pts.push(b.lo);
            pts.push(b.hi);
            let (a, c) = b.image();
            pts.push(a);
            pts.push(c);
        }
        pts
    }

    pub fn integer_slopes(&self) -> bool {
        self.branches.iter().all(|b| (b.slope - b.slope.round()).abs() < 1e-12)
    }

    /// Bitwise identity of the branch table.
    pub fn key(&self) -> Vec<u64> {
        self.branches
            .iter()
            .flat_map(|b| [b.lo.to_bits(), b.hi.to_bits(), b.slope.to_bits(), b.intercept.to_bits()])
            .collect()
    }

    pub fn max_abs_slope(&self) -> f64 {
        self.branches.iter().map(|b| b.slope.abs()).fold(0.0, f64::max)
    }

    pub fn min_abs_slope(&self) -> f64 {
        self.branches.iter().map(|b| b.slope.abs()).fold(f64::INFINITY, f64::min)
    }
}

/// The three-branch Lebesgue-preserving family with central slope `s` fixing 1/2.
pub fn make_example1_map(s: f64) -> Result<PiecewiseAffineMap, Error> {
    if !(s > 1.0) || !s.is_finite() {
        return Err(Error::InvalidInput(format!("central slope must exceed 1, got {s}")));
    }
    let a = (1.0 - 1.0 / s) / 2.0;
    let b = (1.0 + 1.0 / s) / 2.0;
    let outer = 2.0 / (1.0 - 1.0 / s);
    let branches = vec![
        Branch { lo: 0.0, hi: a, slope: -outer, intercept: 1.0, wraps: false },
        Branch { lo: a, hi: b, slope: s, intercept: -(s - 1.0) / 2.0, wraps: false },
        Branch { lo: b, hi: 1.0, slope: -outer, intercept: 1.0 + b * outer, wraps: false },
    ];
    PiecewiseAffineMap::new(branches, format!("example1(s={s})"))
}

/// `x -> beta*x + shift mod 1`, split at every wrap point.
pub fn make_beta_map(beta: f64, shift: f64) -> Result<PiecewiseAffineMap, Error> {
    if !(beta >= 2.0) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("beta must be at least 2, got {beta}")));
    }
    if !(0.0..1.0).contains(&shift) {
        return Err(Error::InvalidInput(format!("shift must lie in [0,1), got {shift}")));
    }
    let mut cuts = vec![0.0];
    let mut k = 1.0;
    loop {
        let x = (k - shift) / beta;
        if x >= 1.0 - 1e-15 {
            break;
        }
        if x > 0.0 {
            cuts.push(x);
        }
        k += 1.0;
    }
    cuts.push(1.0);
    let branches = cuts
        .windows(2)
        .enumerate()
        .map(|(j, w)| Branch { lo: w[0], hi: w[1], slope: beta, intercept: shift - j as f64, wraps: shift != 0.0 || j > 0 })
        .collect();
    PiecewiseAffineMap::new(branches, format!("beta(beta={beta},shift={shift})"))
}

/// Parametric map families selectable from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MapFamily {
    Example1 { s: ParamExpr },
    Beta { beta: ParamExpr, shift: ParamExpr },
}

impl MapFamily {
    pub fn realize(&self, state: FiberState) -> Result<PiecewiseAffineMap, Error> {
        match self {
            MapFamily::Example1 { s } => make_example1_map(s.eval(state)),
            MapFamily::Beta { beta, shift } => make_beta_map(beta.eval(state), shift.eval(state)),
        }
    }
}

/// Best rational approximation with denominator at most `max_den`, accepted only
/// when it reproduces `x` to round-off.
pub fn rational_approx(x: f64, max_den: u64) -> Option<(i64, u64)> {
    if !x.is_finite() {
        return None;
    }
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e15 {
            break;
        }
        let ai = a as i128;
        let h2 = ai * h1 + h0;
        let k2 = ai * k1 + k0;
        if k2 > max_den as i128 {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if (x - h1 as f64 / k1 as f64).abs() <= 1e-13 * x.abs().max(1.0) {
            return Some((h1 as i64, k1 as u64));
        }
        let frac = r - a;
        if frac.abs() < 1e-300 {
            break;
        }
        r = 1.0 / frac;
    }
    None
}

pub fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

pub fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Merge closed intervals; touching intervals are fused.
pub fn merge_intervals(iv: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = iv.iter().copied().filter(|(a, b)| b >= a).collect();
    v.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 + EDGE_TOL => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

pub fn covers_unit(iv: &[(f64, f64)]) -> bool {
    let m = merge_intervals(iv);
    m.len() == 1 && m[0].0 <= EDGE_TOL && m[0].1 >= 1.0 - EDGE_TOL
}

/// Finite union of disjoint closed intervals, the superlevel set of an observable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HoleSpec {
    pub intervals: Vec<(f64, f64)>,
}

impl HoleSpec {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self, Error> {
        let clipped: Vec<(f64, f64)> = intervals.iter().map(|&(a, b)| (a.max(0.0), b.min(1.0))).collect();
        if clipped.iter().any(|(a, b)| !(b > a)) {
            return Err(Error::InvalidInput("hole intervals must have positive length".into()));
        }
        let merged = merge_intervals(&clipped);
        if merged.len() != clipped.len() {
            return Err(Error::InvalidInput("hole intervals overlap".into()));
        }
        Ok(Self { intervals: merged })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn leb(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| x >= a && x <= b)
    }

    pub fn components(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_subset_of(&self, other: &HoleSpec) -> bool {
        self.intervals
            .iter()
            .all(|&(a, b)| other.intervals.iter().any(|&(c, d)| a >= c - EDGE_TOL && b <= d + EDGE_TOL))
    }

    /// Closures of the connected components of `[0,1] \ H`.
    pub fn complement(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut x = 0.0;
        for &(a, b) in &self.intervals {
            if a > x {
                out.push((x, a));
            }
            x = b;
        }
        if x < 1.0 {
            out.push((x, 1.0));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_values() {
        let t = make_example1_map(2.0).unwrap();
        assert_eq!(t.eval(0.5), 0.5);
        assert_eq!(t.eval(0.0), 1.0);
        assert_eq!(t.eval(0.25), 0.0);
        assert_eq!(t.eval(0.75), 1.0);
        assert!(t.eval(1.0).abs() < 1e-15);
        assert!(t.is_surjective());
        assert!(make_example1_map(1.0).is_err());
    }

    #[test]
    fn example1_preimages() {
        let t = make_example1_map(2.0).unwrap();
        let p: Vec<f64> = t.preimages(0.5).into_iter().map(|(y, _)| y).collect();
        assert_eq!(p.len(), 3);
        for (y, want) in p.iter().zip([0.125, 0.5, 0.875]) {
            assert!((y - want).abs() < 1e-15);
        }
    }

    #[test]
    fn one_sided_limits_at_boundary() {
        let t = make_example1_map(2.0).unwrap();
        let (l, r) = t.one_sided(0.75);
        assert!((l - 1.0).abs() < 1e-15 && (r - 1.0).abs() < 1e-15);
        let b = make_beta_map(3.0, 0.0).unwrap();
        let (l, r) = b.one_sided(1.0 / 3.0);
        assert!((l - 1.0).abs() < 1e-12 && r.abs() < 1e-12);
    }

    #[test]
    fn lebesgue_preimage_lengths() {
        // Leb(T^-1 [0,1/2]) = sum over branches of Leb(A)/|slope| = Leb(A) for full branches
        for s in [1.5, 2.0, 2.7, 3.0] {
            let t = make_example1_map(s).unwrap();
            let total: f64 = t.branches.iter().map(|b| 0.5 / b.slope.abs()).sum();
            assert!((total - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn beta_maps() {
        let t = make_beta_map(3.0, 0.0).unwrap();
        assert_eq!(t.branches.len(), 3);
        assert!(t.branches.iter().all(|b| b.is_full()));
        let p: Vec<f64> = t.preimages(0.0).into_iter().map(|(y, _)| y).collect();
        assert_eq!(p.len(), 3);
        for (y, want) in p.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0]) {
            assert!((y - want).abs() < 1e-15);
        }
        let t = make_beta_map(3.0, 0.3).unwrap();
        assert!((t.eval(0.0) - 0.3).abs() < 1e-15);
        assert!(t.is_surjective());
        let t = make_beta_map(2.5, 0.0).unwrap();
        assert_eq!(t.branches.len(), 3);
        let (a, b) = t.branches[2].image();
        assert!(a.abs() < 1e-15 && (b - 0.5).abs() < 1e-12);
        assert!(t.is_surjective());
        assert!(make_beta_map(1.5, 0.0).is_err());
    }

    #[test]
    fn rational_detection() {
        assert_eq!(rational_approx(0.25, 1000), Some((1, 4)));
        assert_eq!(rational_approx(1.0 / 3.0, 1000), Some((1, 3)));
        assert_eq!(rational_approx(std::f64::consts::SQRT_2 - 1.0, 1_000_000), None);
    }

    #[test]
    fn hole_sets() {
        let h = HoleSpec::new(vec![(0.4, 0.6)]).unwrap();
        let g = HoleSpec::new(vec![(0.45, 0.55)]).unwrap();
        assert!(g.is_subset_of(&h) && !h.is_subset_of(&g));
        assert_eq!(h.complement(), vec![(0.0, 0.4), (0.6, 1.0)]);
        assert!((h.leb() - 0.2).abs() < 1e-15);
        assert!(HoleSpec::new(vec![(0.1, 0.3), (0.2, 0.4)]).is_err());
    }
}
