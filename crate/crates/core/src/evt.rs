//! Extreme values: observables and their superlevel holes, threshold schedules,
//! the q̂ series and extremal index, Gumbel non-exceedance and Hüsler averages.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::driving::{FiberPath, FiberState, ParamExpr};
use crate::extrapolate::{first_order_limit, LadderLimit};
use crate::maps::HoleSpec;
use crate::thermo::{self, closed_window, for_blocks, Reference, ThermoConfig};
use crate::transfer::{choose_grid, GridChoice, HoleLevel, OperatorPath};
use crate::Error;

/// Observable families; every member has a unique maximum at its peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ObservableFamily {
    /// `-(x - c)^2`.
    Quadratic { center: ParamExpr },
    /// `-d^2 + skew d^3` with `d = x - c`; `|skew| <= 0.6` keeps the peak unique.
    Cubic { center: ParamExpr, skew: ParamExpr },
    /// `-log dist(x, c)`, with the circle metric when `circle` is set.
    LogDistance {
        center: ParamExpr,
        #[serde(default)]
        circle: bool,
    },
    /// `-x`, peaked at the left endpoint.
    LeftEndpoint,
}

impl ObservableFamily {
    pub fn realize(&self, state: FiberState) -> Observable {
        match self {
            ObservableFamily::Quadratic { center } => Observable::Quadratic { center: center.eval(state) },
            ObservableFamily::Cubic { center, skew } => Observable::Cubic { center: center.eval(state), skew: skew.eval(state) },
            ObservableFamily::LogDistance { center, circle } => Observable::LogDistance { center: center.eval(state), circle: *circle },
            ObservableFamily::LeftEndpoint => Observable::LeftEndpoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    Quadratic { center: f64 },
    Cubic { center: f64, skew: f64 },
    LogDistance { center: f64, circle: bool },
    LeftEndpoint,
}

/// Extent `e > 0` with `e^2 (1 + a e) = u^2`, capped at `cap`.
fn cubic_extent(u: f64, a: f64, cap: f64) -> f64 {
    let g = |e: f64| e * e * (1.0 + a * e);
    if g(cap) <= u * u {
        return cap;
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) <= u * u { lo = mid } else { hi = mid }
    }
    lo
}

impl Observable {
    pub fn validate(&self) -> Result<(), Error> {
        match *self {
            Observable::Quadratic { center } | Observable::LogDistance { center, .. } if !(0.0..=1.0).contains(&center) => {
                Err(Error::InvalidInput(format!("observable peak {center} outside [0,1]")))
            }
            Observable::Cubic { center, skew } if !(0.0..=1.0).contains(&center) || skew.abs() > 0.6 => {
                Err(Error::InvalidInput(format!("cubic observable needs peak in [0,1] and |skew| <= 0.6, got ({center}, {skew})")))
            }
            _ => Ok(()),
        }
    }

    pub fn peak(&self) -> f64 {
        match *self {
            Observable::Quadratic { center } | Observable::Cubic { center, .. } | Observable::LogDistance { center, .. } => center,
            Observable::LeftEndpoint => 0.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Observable::Quadratic { center } => -(x - center).powi(2),
            Observable::Cubic { center, skew } => {
                let d = x - center;
                -d * d + skew * d * d * d
            }
            Observable::LogDistance { center, circle } => {
                let mut d = (x - center).abs();
                if circle {
                    d = d.min(1.0 - d);
                }
                -d.ln()
            }
            Observable::LeftEndpoint => -x,
        }
    }

    /// Smallest size parameter whose hole is all of `[0,1]`.
    pub fn max_size(&self) -> f64 {
        match *self {
            Observable::LogDistance { circle: true, .. } => 0.5,
            Observable::LeftEndpoint => 1.0,
            _ => {
                let c = self.peak();
                c.max(1.0 - c)
            }
        }
    }

    /// Threshold `z` whose superlevel set is `hole(u)`.
    pub fn threshold(&self, u: f64) -> f64 {
        match self {
            Observable::Quadratic { .. } | Observable::Cubic { .. } => -u * u,
            Observable::LogDistance { .. } => -u.ln(),
            Observable::LeftEndpoint => -u,
        }
    }

    /// Closed superlevel hole of size `u`.
    pub fn hole(&self, u: f64) -> HoleSpec {
        let iv = match *self {
            Observable::Quadratic { center } => vec![(center - u, center + u)],
            Observable::Cubic { center, skew } => {
                let r = cubic_extent(u, -skew, 1.0 - center);
                let l = cubic_extent(u, skew, center);
                vec![(center - l, center + r)]
            }
            Observable::LogDistance { center, circle } => {
                let (a, b) = (center - u, center + u);
                if circle && u >= 0.5 {
                    vec![(0.0, 1.0)]
                } else if circle && a < 0.0 {
                    vec![(0.0, b), (1.0 + a, 1.0)]
                } else if circle && b > 1.0 {
                    vec![(0.0, b - 1.0), (a, 1.0)]
                } else {
                    vec![(a, b)]
                }
            }
            Observable::LeftEndpoint => vec![(0.0, u)],
        };
        let iv: Vec<(f64, f64)> = iv.into_iter().map(|(a, b)| (a.max(0.0), b.min(1.0))).filter(|(a, b)| b > a).collect();
        HoleSpec::new(crate::maps::merge_intervals(&iv)).unwrap_or_default()
    }
}

/// Distribution function of a step density given by cell weights summing to 1.
#[derive(Debug, Clone)]
pub struct StepMeasure {
    cum: Vec<f64>,
}

impl StepMeasure {
    pub fn new(weights: &[f64]) -> Self {
        let mut cum = Vec::with_capacity(weights.len() + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for w in weights {
            acc += w;
            cum.push(acc);
        }
        Self { cum }
    }

    pub fn lebesgue(n: usize) -> Self {
        Self::new(&vec![1.0 / n as f64; n])
    }

    pub fn n(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.n();
        let p = (x.clamp(0.0, 1.0) * n as f64).min(n as f64);
        let i = (p.floor() as usize).min(n - 1);
        self.cum[i] + (p - i as f64) * (self.cum[i + 1] - self.cum[i])
    }

    pub fn measure(&self, hole: &HoleSpec) -> f64 {
        hole.intervals.iter().map(|&(a, b)| self.cdf(b) - self.cdf(a)).sum()
    }

    /// Smallest `x` with `cdf(x) >= p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.n();
        let i = self.cum.partition_point(|&c| c < p).clamp(1, n) - 1;
        let w = self.cum[i + 1] - self.cum[i];
        let frac = if w > 0.0 { ((p - self.cum[i]) / w).clamp(0.0, 1.0) } else { 0.0 };
        (i as f64 + frac) / n as f64
    }
}

/// Largest size `u` with `measure(hole(u)) <= target`. Returns `(u, measure)`.
pub fn solve_size(obs: &Observable, measure: &StepMeasure, target: f64) -> (f64, f64) {
    let top = obs.max_size();
    let full = measure.measure(&obs.hole(top));
    if target >= full {
        return (top, full);
    }
    let (mut lo, mut hi) = (0.0f64, top);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if measure.measure(&obs.hole(mid)) <= target { lo = mid } else { hi = mid }
    }
    (lo, measure.measure(&obs.hole(lo)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPolicy {
    pub min_cells: usize,
    pub max_cells: usize,
    /// Try to align the grid with map breakpoints and predicted hole endpoints.
    pub align: bool,
    /// Cells per smallest hole on unaligned grids, before clamping to `max_cells`.
    pub cells_per_hole: usize,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self { min_cells: 4096, max_cells: 1 << 18, align: true, cells_per_hole: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdOptions {
    pub grid: GridPolicy,
    /// Weight exponent `r` in `g = |T'|^-r`.
    pub weight_exponent: f64,
    /// Constant offset added to the target `N μ(H)`; zero except in adversarial checks.
    pub bias: f64,
    pub thermo: ThermoConfig,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self { grid: GridPolicy::default(), weight_exponent: 1.0, bias: 0.0, thermo: ThermoConfig::default() }
    }
}

/// Thresholds and holes for one `N`, with the operators on the grid chosen for it.
#[derive(Debug, Clone)]
pub struct Level {
    pub big_n: f64,
    pub grid: GridChoice,
    pub ops: OperatorPath,
    pub holes: HoleLevel,
    pub z: Vec<f64>,
    pub size: Vec<f64>,
    pub t: Vec<f64>,
    pub xi: Vec<f64>,
    pub mu_hole: Vec<f64>,
    /// Fibers whose hole is all of `[0,1]` or empty.
    pub degenerate: Vec<i64>,
}

impl Level {
    fn slot(&self, k: i64) -> usize {
        (k + self.ops.path.back) as usize
    }

    pub fn xi(&self, k: i64) -> f64 {
        self.xi[self.slot(k)]
    }

    pub fn t(&self, k: i64) -> f64 {
        self.t[self.slot(k)]
    }

    pub fn mu_hole(&self, k: i64) -> f64 {
        self.mu_hole[self.slot(k)]
    }

    pub fn z(&self, k: i64) -> f64 {
        self.z[self.slot(k)]
    }
}

#[derive(Debug, Clone)]
pub struct ThresholdSchedule {
    pub levels: Vec<Level>,
    /// `max |ξ|`.
    pub w_bound: f64,
    /// First fiber and level where a finer hole is not inside the coarser one.
    pub nesting_violation: Option<(i64, f64)>,
    pub warnings: Vec<String>,
}

/// Points a grid should contain so Lebesgue-sized holes and their first images are cell unions.
fn alignment_points(path: &FiberPath, big_n: f64, bias: f64) -> Option<Vec<f64>> {
    let mut seen: HashSet<u64> = HashSet::new();
    let mut pts = Vec::new();
    let mut maps_seen: HashSet<Vec<u64>> = HashSet::new();
    let leb = StepMeasure::lebesgue(1);
    let mut holes_seen: HashSet<(u64, u64)> = HashSet::new();
    for p in &path.params {
        if maps_seen.insert(p.map.key()) {
            for x in p.map.grid_points() {
                if seen.insert(x.to_bits()) {
                    pts.push(x);
                }
            }
        }
        let target = (p.scaling + bias) / big_n;
        let obs_key = (target.to_bits(), format!("{:?}", p.observable).len() as u64 ^ p.observable.peak().to_bits());
        if !holes_seen.insert(obs_key) && holes_seen.len() > 1 {
            continue;
        }
        let (u, _) = solve_size(&p.observable, &leb, target);
        for &(a, b) in &p.observable.hole(u).intervals {
            for x in [a, b, p.map.eval(a), p.map.eval(b)] {
                if seen.insert(x.to_bits()) {
                    pts.push(x);
                }
            }
        }
        if pts.len() > 4096 {
            return None;
        }
    }
    Some(pts)
}

pub fn choose_level_grid(path: &FiberPath, big_n: f64, opts: &ThresholdOptions) -> GridChoice {
    let t_min = path.params.iter().map(|p| p.scaling + opts.bias).fold(f64::INFINITY, f64::min).max(1e-12);
    let wanted = (opts.grid.cells_per_hole as f64 * big_n / t_min).min(opts.grid.max_cells as f64) as usize;
    let n = wanted.next_power_of_two().clamp(opts.grid.min_cells, opts.grid.max_cells);
    let unaligned = GridChoice { n, aligned: false };
    if !opts.grid.align {
        return unaligned;
    }
    match alignment_points(path, big_n, opts.bias) {
        Some(pts) => match choose_grid(&pts, opts.grid.min_cells, opts.grid.max_cells) {
            g if g.aligned => g,
            _ => unaligned,
        },
        None => unaligned,
    }
}

/// Memory-bounded block length for windows of `n`-cell vectors.
pub fn block_len(cfg: &ThermoConfig, n: usize) -> usize {
    cfg.block.min((1usize << 23) / n.max(1)).max(8)
}

/// Solve `μ_k(H_k) = (t_k + ξ)/N` for every fiber and every `N` in `ladder`.
pub fn solve_thresholds(path: Arc<FiberPath>, ladder: &[f64], opts: &ThresholdOptions) -> Result<ThresholdSchedule, Error> {
    if ladder.is_empty() || ladder.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("N ladder must be nonempty and strictly increasing".into()));
    }
    for p in &path.params {
        p.observable.validate()?;
    }
    let mut levels = Vec::new();
    let mut warnings = Vec::new();
    for &big_n in ladder {
        let grid = choose_level_grid(&path, big_n, opts);
        if !grid.aligned {
            warnings.push(format!("N = {big_n}: grid of {} cells is not aligned; expect O(1/n) discretization error", grid.n));
        }
        let ops = OperatorPath::new(path.clone(), grid.n, opts.weight_exponent)?;
        let len = path.len();
        let (mut z, mut size, mut t, mut xi, mut mu_hole) = (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        let mut specs = vec![HoleSpec::empty(); len];
        let mut degenerate = Vec::new();
        let block = block_len(&opts.thermo, grid.n);
        for_blocks(ops.lo(), ops.hi(), block, |s, e| {
            let mus = thermo::invariant_measures(&ops, s, e, &opts.thermo)?;
            for k in s..=e {
                let i = (k + path.back) as usize;
                let p = path.params(k);
                let measure = StepMeasure::new(&mus[(k - s) as usize]);
                let target = (p.scaling + opts.bias) / big_n;
                if target > 1.0 + 1e-12 {
                    return Err(Error::Unattainable { fiber: k, target });
                }
                let (u, m) = solve_size(&p.observable, &measure, target);
                let hole = p.observable.hole(u);
                if hole.is_empty() || u >= p.observable.max_size() {
                    degenerate.push(k);
                }
                z[i] = p.observable.threshold(u);
                size[i] = u;
                t[i] = p.scaling;
                xi[i] = big_n * m - p.scaling;
                mu_hole[i] = m;
                specs[i] = hole;
            }
            Ok(())
        })?;
        if !degenerate.is_empty() {
            warnings.push(format!("N = {big_n}: {} degenerate fibers (empty or full hole), first {}", degenerate.len(), degenerate[0]));
        }
        let holes = HoleLevel::new(big_n, path.back, specs, grid.n);
        levels.push(Level { big_n, grid, ops, holes, z, size, t, xi, mu_hole, degenerate });
    }
    let w_bound = levels.iter().flat_map(|l| l.xi.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
    let nesting_violation = check_nesting(&levels);
    Ok(ThresholdSchedule { levels, w_bound, nesting_violation, warnings })
}

/// First `(fiber, N)` where the hole at `N` is not inside the hole at the previous `N`.
pub fn check_nesting(levels: &[Level]) -> Option<(i64, f64)> {
    for w in levels.windows(2) {
        let (coarse, fine) = (&w[0], &w[1]);
        for k in fine.ops.lo()..=fine.ops.hi() {
            if !fine.holes.spec(k).is_subset_of(coarse.holes.spec(k)) {
                return Some((k, fine.big_n));
            }
        }
    }
    None
}

/// q̂ for targets `[t0, t1]`, `k = 0..=k_max`, computed two ways.
#[derive(Debug, Clone)]
pub struct QhatTable {
    pub t0: i64,
    pub k_max: usize,
    /// Operator form: `ν_{t+1}((L_0-L_ε) L^k_ε (L_0-L_ε) φ) / Δ_t / λ^{k+1}`.
    pub operator: Vec<Vec<f64>>,
    /// Conditional-measure form from a backward dual sweep.
    pub conditional: Vec<Vec<f64>>,
    pub mu_hole: Vec<f64>,
    pub delta: Vec<f64>,
    pub t: Vec<f64>,
    pub max_discrepancy: f64,
}

impl QhatTable {
    pub fn row(&self, t: i64) -> &[f64] {
        &self.operator[(t - self.t0) as usize]
    }

    /// Fibers with a hole of positive measure.
    pub fn in_omega_plus(&self, t: i64) -> bool {
        self.mu_hole[(t - self.t0) as usize] > 0.0
    }
}

pub fn qhat(level: &Level, t0: i64, t1: i64, k_max: usize, cfg: &ThermoConfig) -> Result<QhatTable, Error> {
    let ops = &level.ops;
    let holes = &level.holes;
    let m = (t1 - t0 + 1) as usize;
    let mut operator = vec![vec![f64::NAN; k_max + 1]; m];
    let mut conditional = vec![vec![f64::NAN; k_max + 1]; m];
    let mut mu_hole = vec![0.0; m];
    let mut delta = vec![0.0; m];
    let t: Vec<f64> = (t0..=t1).map(|k| level.t(k)).collect();
    let kk = k_max as i64;
    let block = block_len(cfg, ops.n).saturating_sub(k_max + 2).max(4);
    for_blocks(t0, t1, block, |s, e| {
        let a = s - kk - 1;
        let w = closed_window(ops, a, e + 1, cfg)?;
        // operator form, forward from each start fiber
        let dual: Vec<Vec<f64>> = (s..=e).map(|t| ops.matrix(t).apply_transpose(w.nu(t + 1))).collect();
        for t in s..=e {
            let i = (t - t0) as usize;
            let dl = holes.mask(t).pair_hole(&dual[(t - s) as usize], w.phi(t));
            delta[i] = dl;
            mu_hole[i] = holes.mask(t).pair_hole(w.nu(t), w.phi(t));
        }
        for u in a..e {
            let mut g = ops.matrix(u).apply(&holes.mask(u).hole_part(w.phi(u)));
            let mut prod = w.lambda(u);
            let last = (u + 1 + kk).min(e);
            for t in (u + 1)..=last {
                let k = (t - u - 1) as usize;
                if t >= s {
                    let i = (t - t0) as usize;
                    if delta[i] > 0.0 {
                        let num = holes.mask(t).pair_hole(&dual[(t - s) as usize], &g);
                        operator[i][k] = num / delta[i] / prod;
                    }
                }
                if t < last {
                    g = ops.matrix(t).apply_open(Some(holes.mask(t)), &g);
                    prod *= w.lambda(t);
                }
            }
        }
        // conditional form, backward from each target
        for t in s..=e {
            let i = (t - t0) as usize;
            if mu_hole[i] <= 0.0 {
                continue;
            }
            let mut v = holes.mask(t).hole_part(w.nu(t));
            for k in 0..=k_max {
                let u = t - k as i64 - 1;
                let pulled = ops.matrix(u).apply_transpose(&v);
                let lam = w.lambda(u);
                conditional[i][k] = holes.mask(u).pair_hole(&pulled, w.phi(u)) / lam / mu_hole[i];
                v = pulled;
                holes.mask(u).restrict_in_place(&mut v);
                v.iter_mut().for_each(|x| *x /= lam);
            }
        }
        Ok(())
    })?;
    let mut max_discrepancy: f64 = 0.0;
    for i in 0..m {
        for k in 0..=k_max {
            let (x, y) = (operator[i][k], conditional[i][k]);
            if x.is_finite() && y.is_finite() {
                max_discrepancy = max_discrepancy.max((x - y).abs());
            }
        }
    }
    Ok(QhatTable { t0, k_max, operator, conditional, mu_hole, delta, t, max_discrepancy })
}

/// Closed-form extremal index for the bundled example families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClosedForm {
    /// Holes around a common fixed point `x0` of linear branches:
    /// `1 - min{t_{k-1}/t_k, 1/|T'_{k-1}(x0)|}`.
    FixedPoint { x0: f64 },
    /// Holes `[0, r]` at the common fixed point 0 of β-maps:
    /// `1 - min{t_{k-1}/t_k, φ_{k-1}(0) / Σ_{T y = 0} φ_{k-1}(y)}` with right limits.
    LeftEndpoint,
    /// A fixed map with a periodic point: `1 - 1/|DT^p(x0)|`.
    Periodic { x0: f64, period: usize },
    /// Aperiodic centers: `1`.
    Aperiodic,
}

impl ClosedForm {
    /// Per-fiber value; `phi_prev` is the closed density on fiber `k-1` (needed for `LeftEndpoint`).
    pub fn theta(&self, path: &FiberPath, k: i64, phi_prev: Option<&[f64]>) -> f64 {
        match *self {
            ClosedForm::FixedPoint { x0 } => {
                let ratio = path.params(k - 1).scaling / path.params(k).scaling;
                1.0 - ratio.min(1.0 / path.map(k - 1).derivative(x0).abs())
            }
            ClosedForm::LeftEndpoint => {
                let ratio = path.params(k - 1).scaling / path.params(k).scaling;
                let phi = phi_prev.expect("closed density required");
                let n = phi.len();
                let at = |y: f64| phi[((y * n as f64 + 1e-9).floor() as usize).min(n - 1)];
                let total: f64 = path.map(k - 1).preimages(0.0).into_iter().map(|(y, _)| at(y)).sum();
                1.0 - ratio.min(at(0.0) / total)
            }
            ClosedForm::Periodic { x0, period } => {
                let mut x = x0;
                let mut d = 1.0;
                for j in 0..period {
                    let m = path.map(k + j as i64);
                    d *= m.derivative(x).abs();
                    x = m.eval(x);
                }
                1.0 - 1.0 / d
            }
            ClosedForm::Aperiodic => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ThetaFiber {
    pub k: i64,
    pub t: f64,
    /// Per level: q̂^(k) for `k = 0..=k_max`.
    pub qhat: Vec<Vec<f64>>,
    /// Per level: truncated `θ = 1 - Σ_{k <= k_max} q̂`.
    pub theta_levels: Vec<f64>,
    pub limit: LadderLimit,
    pub closed_form: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ThetaReport {
    pub k_max: usize,
    pub ladder: Vec<f64>,
    pub fibers: Vec<ThetaFiber>,
    /// Fibers outside `Ω₊` (hole of zero measure at some level).
    pub excluded: Vec<i64>,
    /// Average of the extrapolated per-fiber θ.
    pub theta_mean: f64,
    /// Average of `t θ`.
    pub t_theta_mean: f64,
    pub closed_form_mean: Option<f64>,
    pub closed_form_t_theta_mean: Option<f64>,
    /// Per level: `Σ_t μ(H_t) Σ_k q̂ / Σ_t μ(H_t)`.
    pub weighted_qsum: Vec<f64>,
    /// Per level: weighted average of `Σ_{k_max/2 < k <= k_max} q̂` at the finest level.
    pub tail: f64,
    pub max_discrepancy: f64,
}

impl ThetaReport {
    /// Averaged θ truncation sequence `θ_n = 1 - Σ_{k<n} q̂` at the finest level.
    pub fn truncations(&self) -> Vec<f64> {
        let last = self.ladder.len() - 1;
        (0..=self.k_max + 1)
            .map(|n| {
                let s: f64 = self.fibers.iter().map(|f| 1.0 - f.qhat[last][..n].iter().sum::<f64>()).sum();
                s / self.fibers.len() as f64
            })
            .collect()
    }
}

/// θ over targets `[t0, t1]` for every level of the schedule; `k_max` doubles up
/// to `k_cap` while the weighted tail exceeds `tail_tol`.
pub fn theta_estimate(schedule: &ThresholdSchedule, t0: i64, t1: i64, k_max: usize, k_cap: usize, tail_tol: f64, closed: Option<ClosedForm>, cfg: &ThermoConfig) -> Result<ThetaReport, Error> {
    let mut k_max = k_max;
    loop {
        let report = theta_once(schedule, t0, t1, k_max, closed, cfg)?;
        if report.tail <= tail_tol || k_max * 2 > k_cap {
            return Ok(report);
        }
        k_max *= 2;
    }
}

fn theta_once(schedule: &ThresholdSchedule, t0: i64, t1: i64, k_max: usize, closed: Option<ClosedForm>, cfg: &ThermoConfig) -> Result<ThetaReport, Error> {
    let tables: Vec<QhatTable> = schedule.levels.iter().map(|l| qhat(l, t0, t1, k_max, cfg)).collect::<Result<_, _>>()?;
    let ladder: Vec<f64> = schedule.levels.iter().map(|l| l.big_n).collect();
    let last = tables.len() - 1;
    let path = schedule.levels[0].ops.path.clone();
    let phis: Option<Vec<Vec<f64>>> = match closed {
        Some(ClosedForm::LeftEndpoint) => {
            let l = &schedule.levels[last];
            Some(thermo::invariant_measures(&l.ops, t0 - 1, t1 - 1, cfg)?.into_iter().map(|m| {
                // μ weights back to a density against the closed functional
                let n = m.len() as f64;
                m.iter().map(|x| x * n).collect()
            }).collect())
        }
        _ => None,
    };
    let mut fibers = Vec::new();
    let mut excluded = Vec::new();
    for t in t0..=t1 {
        if !tables.iter().all(|tb| tb.in_omega_plus(t)) {
            excluded.push(t);
            continue;
        }
        let qh: Vec<Vec<f64>> = tables.iter().map(|tb| tb.row(t).to_vec()).collect();
        let theta_levels: Vec<f64> = qh.iter().map(|q| 1.0 - q.iter().sum::<f64>()).collect();
        let pts: Vec<(f64, f64)> = ladder.iter().zip(&theta_levels).map(|(n, th)| (1.0 / n, *th)).collect();
        let limit = first_order_limit(&pts, 1e-9);
        let closed_form = closed.map(|c| c.theta(&path, t, phis.as_ref().map(|p| p[(t - t0) as usize].as_slice())));
        fibers.push(ThetaFiber { k: t, t: tables[0].t[(t - t0) as usize], qhat: qh, theta_levels, limit, closed_form });
    }
    let count = fibers.len().max(1) as f64;
    let theta_mean = fibers.iter().map(|f| f.limit.value).sum::<f64>() / count;
    let t_theta_mean = fibers.iter().map(|f| f.t * f.limit.value).sum::<f64>() / count;
    let closed_form_mean = closed.map(|_| fibers.iter().map(|f| f.closed_form.unwrap()).sum::<f64>() / count);
    let closed_form_t_theta_mean = closed.map(|_| fibers.iter().map(|f| f.t * f.closed_form.unwrap()).sum::<f64>() / count);
    let weighted_qsum = tables
        .iter()
        .map(|tb| {
            let (mut num, mut den) = (0.0, 0.0);
            for (i, row) in tb.operator.iter().enumerate() {
                if tb.mu_hole[i] > 0.0 {
                    num += tb.mu_hole[i] * row.iter().sum::<f64>();
                    den += tb.mu_hole[i];
                }
            }
            num / den
        })
        .collect();
    let tb = &tables[last];
    let (mut num, mut den) = (0.0, 0.0);
    for (i, row) in tb.operator.iter().enumerate() {
        if tb.mu_hole[i] > 0.0 {
            num += tb.mu_hole[i] * row[k_max / 2 + 1..].iter().sum::<f64>();
            den += tb.mu_hole[i];
        }
    }
    let max_discrepancy = tables.iter().map(|t| t.max_discrepancy).fold(0.0, f64::max);
    Ok(ThetaReport {
        k_max,
        ladder,
        fibers,
        excluded,
        theta_mean,
        t_theta_mean,
        closed_form_mean,
        closed_form_t_theta_mean,
        weighted_qsum,
        tail: num / den,
        max_discrepancy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelRow {
    pub big_n: f64,
    /// `ν_{k,0}(X_{k,N-1,ε_N})`.
    pub nu_survivor: f64,
    /// `μ_{k,0}(X_{k,N-1,ε_N})`.
    pub mu_survivor: f64,
    /// `λ^N_ε / λ^N_0`.
    pub lambda_ratio: f64,
    /// `exp(-∫ t θ dm)` from the supplied estimate.
    pub target: f64,
    /// Bound on the gaps between the three forms from `ν_ε(1)`, `ν_ε(φ_0)` and the
    /// `D κ^N` remainder.
    pub q_bound: f64,
}

impl GumbelRow {
    /// Largest gap among the ν-, μ- and λ-ratio forms.
    pub fn form_spread(&self) -> f64 {
        let f = [self.nu_survivor, self.mu_survivor, self.lambda_ratio];
        f.iter().copied().fold(f64::NEG_INFINITY, f64::max) - f.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Non-exceedance at level `N` from fiber `k`, three ways.
pub fn gumbel_check(level: &Level, k: i64, t_theta: f64, cfg: &ThermoConfig) -> Result<GumbelRow, Error> {
    let steps = level.big_n.round() as usize;
    let surv = thermo::survivor_curve(&level.ops, &level.holes, k, &[steps], cfg)?;
    let ratio = surv.log_multiplier_ratio.exp();
    let decay = thermo::decay_rate(&level.ops, Some(&level.holes), k, 3, 40, 17, cfg)?;
    let remainder = decay.d_const * decay.kappa.powf(steps as f64);
    let q_bound = ratio * ((surv.nu_pairing - 1.0).abs().max((surv.mu_pairing - 1.0).abs()) + remainder) + 1e-9;
    Ok(GumbelRow {
        big_n: level.big_n,
        nu_survivor: surv.value(Reference::Nu),
        mu_survivor: surv.value(Reference::Mu),
        lambda_ratio: ratio,
        target: (-t_theta).exp(),
        q_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuslerReport {
    /// `(1/L) Σ_{j<L} N μ_{k+j}(H_{k+j})`.
    pub average: f64,
    /// Average of `t_{k+j}` over the same fibers.
    pub sample_t: f64,
    /// `average - ∫ t dm`.
    pub deviation: f64,
    /// `average - sample_t`, i.e. the mean of `ξ`.
    pub xi_mean: f64,
    /// `|xi_mean|` above tolerance.
    pub flagged: bool,
}

pub fn husler_consistency(level: &Level, k: i64, len: usize, t_integral: f64, tol: f64) -> HuslerReport {
    let fibers = k..k + len as i64;
    let average = fibers.clone().map(|j| level.big_n * level.mu_hole(j)).sum::<f64>() / len as f64;
    let sample_t = fibers.map(|j| level.t(j)).sum::<f64>() / len as f64;
    let xi_mean = average - sample_t;
    HuslerReport { average, sample_t, deviation: average - t_integral, xi_mean, flagged: xi_mean.abs() > tol }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_holes() {
        let o = Observable::Quadratic { center: 0.5 };
        let h = o.hole(0.1);
        assert_eq!(h.intervals, vec![(0.4, 0.6)]);
        assert!((o.eval(0.4) - o.threshold(0.1)).abs() < 1e-15);
        let (u, m) = solve_size(&o, &StepMeasure::lebesgue(100), 0.02);
        assert!((u - 0.01).abs() < 1e-15 && (m - 0.02).abs() < 1e-15);
    }

    #[test]
    fn circle_ball() {
        let o = Observable::LogDistance { center: 0.05, circle: true };
        let h = o.hole(0.1);
        assert_eq!(h.components(), 2);
        assert!((h.leb() - 0.2).abs() < 1e-15);
        // 2 e^{-z} = μ(H) for Lebesgue
        let (u, m) = solve_size(&o, &StepMeasure::lebesgue(64), 1e-3);
        assert!((2.0 * (-o.threshold(u)).exp() - m).abs() < 1e-15);
    }

    #[test]
    fn cubic_hole_edges_on_level_set() {
        let o = Observable::Cubic { center: 0.125, skew: 0.4 };
        let h = o.hole(0.01);
        let (a, b) = h.intervals[0];
        assert!((o.eval(a) - o.threshold(0.01)).abs() < 1e-15);
        assert!((o.eval(b) - o.threshold(0.01)).abs() < 1e-15);
        assert!(b - 0.125 > 0.125 - a);
    }

    #[test]
    fn full_hole_when_target_is_one() {
        let o = Observable::Quadratic { center: 0.5 };
        let (u, m) = solve_size(&o, &StepMeasure::lebesgue(10), 1.0);
        assert_eq!(u, 0.5);
        assert!((m - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let s = StepMeasure::new(&[0.1, 0.0, 0.6, 0.3]);
        for p in [0.05, 0.1, 0.4, 0.95] {
            assert!((s.cdf(s.quantile(p)) - p).abs() < 1e-14);
        }
    }
}
