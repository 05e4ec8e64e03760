//! Limit laws for Birkhoff sums of closed random systems (`r = 1`, so the
//! conformal measure is Lebesgue and `λ ≡ 1`).
//!
//! Correlations `∫ v_{k+j} · L^j(v_k h_k)` are pushed forward on the grid,
//! which is exact when the observable and densities are grid functions. The
//! Monte Carlo side samples `S_n v` under `μ_k` with dithered orbits.

use std::collections::HashMap;
use std::sync::Arc;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::LimitObservable;
use crate::evt::StepMeasure;
use crate::maps::{HoleSpec, PiecewiseAffineMap};
use crate::mc::{self, ks_statistic, par_samples, sample_point};
use crate::thermo::{self, for_blocks, ThermoConfig};
use crate::transfer::{mean, sup_norm, HoleMask, OperatorPath};
use crate::Error;

fn half(x: f64) -> f64 {
    if x <= 0.5 { 1.0 } else { 0.0 }
}

impl LimitObservable {
    /// Value at `x` on a fiber with map `map`, before centering.
    pub fn eval(&self, map: &PiecewiseAffineMap, x: f64) -> f64 {
        match self {
            LimitObservable::HalfIndicator => half(x),
            LimitObservable::Cosine => (std::f64::consts::TAU * x).cos(),
            LimitObservable::Coboundary => half(x) - half(map.eval(x)),
        }
    }

    /// Cell averages on an `n`-cell grid.
    pub fn grid(&self, map: &PiecewiseAffineMap, n: usize) -> Vec<f64> {
        let half_grid = || HoleMask::new(&HoleSpec::new(vec![(0.0, 0.5)]).expect("valid interval"), n).to_dense().iter().map(|m| 1.0 - m).collect::<Vec<f64>>();
        match self {
            LimitObservable::HalfIndicator => half_grid(),
            LimitObservable::Cosine => {
                let nf = n as f64;
                let w = std::f64::consts::TAU;
                (0..n).map(|i| nf / w * ((w * (i + 1) as f64 / nf).sin() - (w * i as f64 / nf).sin())).collect()
            }
            LimitObservable::Coboundary => {
                let pre: Vec<(f64, f64)> = map
                    .branches
                    .iter()
                    .filter_map(|b| {
                        let cut = (0.5 - b.intercept) / b.slope;
                        let (lo, hi) = if b.slope > 0.0 { (b.lo, cut.min(b.hi)) } else { (cut.max(b.lo), b.hi) };
                        (hi > lo).then_some((lo, hi))
                    })
                    .collect();
                let pulled = match HoleSpec::new(crate::maps::merge_intervals(&pre)) {
                    Ok(h) => HoleMask::new(&h, n).to_dense(),
                    Err(_) => vec![1.0; n],
                };
                half_grid().iter().zip(&pulled).map(|(a, m)| a - (1.0 - m)).collect()
            }
        }
    }

    /// Points where the grid version is discontinuous, for grid alignment.
    pub fn grid_points(&self, map: &PiecewiseAffineMap) -> Vec<f64> {
        match self {
            LimitObservable::HalfIndicator => vec![0.5],
            LimitObservable::Cosine => Vec::new(),
            LimitObservable::Coboundary => {
                let mut p = vec![0.5];
                p.extend(map.preimages(0.5).into_iter().map(|(y, _)| y));
                p
            }
        }
    }
}

/// Observable grids shared between fibers with the same map.
struct GridCache {
    obs: LimitObservable,
    n: usize,
    by_map: HashMap<*const PiecewiseAffineMap, Arc<Vec<f64>>>,
}

impl GridCache {
    fn new(obs: LimitObservable, n: usize) -> Self {
        Self { obs, n, by_map: HashMap::new() }
    }

    fn get(&mut self, ops: &OperatorPath, k: i64) -> Arc<Vec<f64>> {
        let map = ops.path.map(k);
        let key = map as *const PiecewiseAffineMap;
        let (obs, n) = (self.obs, self.n);
        self.by_map.entry(key).or_insert_with(|| Arc::new(obs.grid(map, n))).clone()
    }
}

/// Fiberwise means `μ_k(v_k)` and the constants the limit bounds need.
#[derive(Debug, Clone)]
pub struct Centering {
    pub a: i64,
    pub centers: Vec<f64>,
    /// `max_k |μ_k(v_k - c_k)|` after centering.
    pub residual: f64,
    /// `C₂ = max_k sup |v_k - c_k|`.
    pub sup: f64,
    /// `U` with `1/U ≤ h_k ≤ U` for the invariant densities.
    pub density_bound: f64,
}

impl Centering {
    pub fn center(&self, k: i64) -> f64 {
        self.centers[(k - self.a) as usize]
    }
}

fn check_closed(ops: &OperatorPath) -> Result<(), Error> {
    if (ops.r - 1.0).abs() > 1e-15 {
        return Err(Error::InvalidInput(format!("limit laws need the closed weight r = 1, got r = {}", ops.r)));
    }
    Ok(())
}

pub fn centering(ops: &OperatorPath, obs: LimitObservable, a: i64, b: i64, cfg: &ThermoConfig) -> Result<Centering, Error> {
    check_closed(ops)?;
    let mut cache = GridCache::new(obs, ops.n);
    let mut centers = Vec::with_capacity((b - a + 1) as usize);
    let (mut residual, mut sup, mut u) = (0.0f64, 0.0f64, 1.0f64);
    let nf = ops.n as f64;
    for_blocks(a, b, cfg.block, |s, e| {
        let mus = thermo::invariant_measures(ops, s, e, cfg)?;
        for (k, mu) in (s..=e).zip(&mus) {
            let v = cache.get(ops, k);
            let c: f64 = mu.iter().zip(v.iter()).map(|(m, x)| m * x).sum();
            let r: f64 = mu.iter().zip(v.iter()).map(|(m, x)| m * (x - c)).sum();
            residual = residual.max(r.abs());
            sup = sup.max(v.iter().fold(0.0f64, |m, x| m.max((x - c).abs())));
            let (lo, hi) = mu.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), m| (lo.min(m * nf), hi.max(m * nf)));
            u = u.max(hi).max(1.0 / lo);
            centers.push(c);
        }
        Ok(())
    })?;
    Ok(Centering { a, centers, residual, sup, density_bound: u })
}

#[derive(Debug, Clone)]
pub struct VarianceEstimate {
    /// Fibers `[a, a + n)` averaged over.
    pub a: i64,
    pub n: usize,
    pub lags: usize,
    /// Fiber-averaged `C_0 + 2 Σ_{1 ≤ j ≤ lags} C_j`.
    pub sigma2: f64,
    /// `Var_{μ_a}(S_n) / n` from the same correlations.
    pub finite_n: f64,
    /// Bound on the dropped lags `j > lags`.
    pub tail_bound: f64,
    /// Fiber-averaged `C_j`, `j = 0..=lags`.
    pub correlations: Vec<f64>,
    pub kappa: f64,
    pub d_const: f64,
}

/// Green–Kubo variance from grid correlations over fibers `[a, a + n)`.
pub fn variance_estimate(ops: &OperatorPath, obs: LimitObservable, a: i64, n: usize, lags: usize, cfg: &ThermoConfig) -> Result<VarianceEstimate, Error> {
    check_closed(ops)?;
    if n == 0 {
        return Err(Error::InvalidInput("variance_estimate needs n > 0".into()));
    }
    let b = a + n as i64 - 1;
    let cent = centering(ops, obs, a, b + lags as i64, cfg)?;
    let mut cache = GridCache::new(obs, ops.n);
    let mut sums = vec![0.0; lags + 1];
    let mut finite = 0.0;
    let mut vh_sup = 0.0f64;
    for_blocks(a, b, cfg.block, |s, e| {
        let mus = thermo::invariant_measures(ops, s, e, cfg)?;
        for (i, mu) in (s..=e).zip(&mus) {
            let v = cache.get(ops, i);
            let c = cent.center(i);
            let mut f: Vec<f64> = mu.iter().zip(v.iter()).map(|(m, x)| m * ops.n as f64 * (x - c)).collect();
            vh_sup = vh_sup.max(sup_norm(&f));
            let within = (b - i) as usize;
            for j in 0..=lags {
                if j > 0 {
                    f = ops.matrix(i + j as i64 - 1).apply(&f);
                }
                let w = cache.get(ops, i + j as i64);
                let cw = cent.center(i + j as i64);
                let cj = f.iter().zip(w.iter()).map(|(p, x)| p * (x - cw)).sum::<f64>() / ops.n as f64;
                sums[j] += cj;
                if j <= within {
                    finite += if j == 0 { cj } else { 2.0 * cj };
                }
            }
        }
        Ok(())
    })?;
    let correlations: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let sigma2 = correlations[0] + 2.0 * correlations[1..].iter().sum::<f64>();
    let decay = thermo::decay_rate(ops, None, a, 4, lags.max(16), 0, cfg)?;
    let tail_bound = if decay.kappa < 1.0 - 1e-9 {
        2.0 * cent.sup * decay.d_const * vh_sup * decay.kappa.powi(lags as i32 + 1) / (1.0 - decay.kappa)
    } else {
        f64::INFINITY
    };
    Ok(VarianceEstimate { a, n, lags, sigma2, finite_n: finite / n as f64, tail_bound, correlations, kappa: decay.kappa, d_const: decay.d_const })
}

/// Birkhoff sums `S_m v` under `μ_a` at each horizon `m`, one row per horizon.
pub fn birkhoff_samples(ops: &OperatorPath, obs: LimitObservable, cent: &Centering, a: i64, horizons: &[usize], samples: usize, seed: u64, cfg: &ThermoConfig) -> Result<Vec<Vec<f64>>, Error> {
    let last = horizons.iter().copied().max().unwrap_or(0);
    if cent.a > a || cent.a + (cent.centers.len() as i64) < a + last as i64 {
        return Err(Error::InvalidInput("centering does not cover the Birkhoff horizon".into()));
    }
    let mu = thermo::invariant_measures(ops, a, a, cfg)?.remove(0);
    let start = StepMeasure::new(&mu);
    let path = &ops.path;
    let rows: Vec<Vec<f64>> = par_samples(samples, seed, |rng, _| {
        let mut x = sample_point(&start, rng);
        let mut s = 0.0;
        let mut out = Vec::with_capacity(horizons.len());
        let mut next = 0;
        let mut sorted: Vec<(usize, usize)> = horizons.iter().copied().enumerate().map(|(i, h)| (h, i)).collect();
        sorted.sort_unstable();
        let mut slot = vec![0.0; horizons.len()];
        for j in 0..=last {
            while next < sorted.len() && sorted[next].0 == j {
                slot[sorted[next].1] = s;
                next += 1;
            }
            if j == last {
                break;
            }
            let k = a + j as i64;
            let map = path.map(k);
            s += obs.eval(map, x) - cent.center(k);
            x = mc::dithered_step(map, x, rng);
        }
        out.extend_from_slice(&slot);
        out
    });
    Ok((0..horizons.len()).map(|h| rows.iter().map(|r| r[h]).collect()).collect())
}

#[derive(Debug, Clone)]
pub struct CltReport {
    pub n: usize,
    pub samples: usize,
    pub sigma2: f64,
    /// Predicted `Var(S_n)/n` for the sampled fiber.
    pub variance_n: f64,
    /// Sample variance of `S_n/√n` and its standard error.
    pub direct: f64,
    pub direct_se: f64,
    pub ks: f64,
    pub ks_tol: f64,
}

impl CltReport {
    pub fn ks_pass(&self) -> bool {
        self.ks < self.ks_tol
    }

    pub fn direct_pass(&self) -> bool {
        (self.direct - self.variance_n).abs() <= 3.0 * self.direct_se
    }
}

fn variance_with_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = sq.iter().sum::<f64>() / (m - 1.0);
    let var_sq = sq.iter().map(|s| (s - var).powi(2)).sum::<f64>() / (m - 1.0);
    (var, (var_sq / m).sqrt())
}

/// KS distance of `S_n/√n` to the normal law with the predicted variance.
///
/// For lattice-valued observables `S_n` is smoothed by an independent
/// `U(-1/2, 1/2)` before scaling, which adds `1/(12n)` to the variance.
pub fn clt_check(ops: &OperatorPath, obs: LimitObservable, a: i64, n: usize, samples: usize, lags: usize, ks_tol: f64, seed: u64, cfg: &ThermoConfig) -> Result<CltReport, Error> {
    let var = variance_estimate(ops, obs, a, n, lags, cfg)?;
    if var.sigma2 <= var.tail_bound.max(1e-10) {
        return Err(Error::Degenerate(format!(
            "Σ² = {:.3e} is within the tail bound {:.3e}: the observable behaves like a coboundary and has no Gaussian limit",
            var.sigma2, var.tail_bound
        )));
    }
    let cent = centering(ops, obs, a, a + n as i64, cfg)?;
    let sums = birkhoff_samples(ops, obs, &cent, a, &[n], samples, seed, cfg)?.remove(0);
    let lattice = matches!(obs, LimitObservable::HalfIndicator);
    let root = (n as f64).sqrt();
    let scaled: Vec<f64> = sums.iter().map(|s| s / root).collect();
    let (direct, direct_se) = variance_with_se(&scaled);
    let mut jitter = mc::chunk_rng(seed ^ 0x9e37_79b9_7f4a_7c15, 0);
    let mut smoothed: Vec<f64> = if lattice {
        use rand::Rng;
        sums.iter().map(|s| (s + jitter.random::<f64>() - 0.5) / root).collect()
    } else {
        scaled
    };
    smoothed.sort_by(f64::total_cmp);
    let sd = (var.finite_n + if lattice { 1.0 / (12.0 * n as f64) } else { 0.0 }).sqrt();
    let normal = Normal::new(0.0, sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let ks = ks_statistic(&smoothed, |x| normal.cdf(x));
    Ok(CltReport { n, samples, sigma2: var.sigma2, variance_n: var.finite_n, direct, direct_se, ks, ks_tol })
}

#[derive(Debug, Clone, Copy)]
pub struct AzumaConstants {
    /// `sup |v|` after centering.
    pub c2: f64,
    /// `U² D C₂ Σ κ^j`.
    pub c1: f64,
    pub u: f64,
    pub d_const: f64,
    pub kappa: f64,
}

impl AzumaConstants {
    pub fn bound(&self, deviation: f64, n: usize) -> f64 {
        2.0 * (-deviation * deviation * n as f64 / (8.0 * (self.c2 + 2.0 * self.c1).powi(2))).exp()
    }

    /// Smallest `n₀` with `C₁/n₀ ≤ ϰ/2`.
    pub fn n0(&self, deviation: f64) -> usize {
        (2.0 * self.c1 / deviation).ceil() as usize
    }
}

#[derive(Debug, Clone)]
pub struct AzumaRow {
    pub deviation: f64,
    pub n: usize,
    pub n0: usize,
    pub empirical: f64,
    pub bound: f64,
}

impl AzumaRow {
    pub fn applies(&self) -> bool {
        self.n > self.n0
    }

    pub fn violated(&self) -> bool {
        self.applies() && self.empirical > self.bound
    }
}

#[derive(Debug, Clone)]
pub struct AzumaReport {
    pub constants: AzumaConstants,
    pub rows: Vec<AzumaRow>,
}

impl AzumaReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.violated()).count()
    }
}

pub fn azuma_constants(ops: &OperatorPath, cent: &Centering, a: i64, steps: usize, cfg: &ThermoConfig) -> Result<AzumaConstants, Error> {
    let decay = thermo::decay_rate(ops, None, a, 4, steps, 0, cfg)?;
    let c1 = if decay.kappa < 1.0 { cent.density_bound.powi(2) * decay.d_const * cent.sup / (1.0 - decay.kappa) } else { f64::INFINITY };
    Ok(AzumaConstants { c2: cent.sup, c1, u: cent.density_bound, d_const: decay.d_const, kappa: decay.kappa })
}

/// Empirical `μ_a(|S_n/n| > ϰ)` against the Azuma bound for every `(ϰ, n)`.
pub fn azuma_bound_check(ops: &OperatorPath, obs: LimitObservable, a: i64, deviations: &[f64], horizons: &[usize], samples: usize, seed: u64, cfg: &ThermoConfig) -> Result<AzumaReport, Error> {
    let last = horizons.iter().copied().max().unwrap_or(0);
    let cent = centering(ops, obs, a, a + last as i64, cfg)?;
    let constants = azuma_constants(ops, &cent, a, 64, cfg)?;
    let sums = birkhoff_samples(ops, obs, &cent, a, horizons, samples, seed, cfg)?;
    let mut rows = Vec::new();
    for &dev in deviations {
        for (h, &n) in horizons.iter().enumerate() {
            let hits = sums[h].iter().filter(|s| (*s / n as f64).abs() > dev).count();
            rows.push(AzumaRow { deviation: dev, n, n0: constants.n0(dev), empirical: hits as f64 / samples as f64, bound: constants.bound(dev, n) });
        }
    }
    Ok(AzumaReport { constants, rows })
}

#[derive(Debug, Clone, Copy)]
pub struct MartingaleCheck {
    pub steps: usize,
    /// `max_m ||L_m(M_m h_m)||∞`, the conditional mean of the increment.
    pub residual: f64,
    /// `max_m ||G_m||∞`.
    pub g_sup: f64,
}

/// Conditional means of the increments `M_m = v_m + G_m - G_{m+1}∘T` with
/// `G_m h_m = Σ_{j<m} L^{m-j}(v_j h_j)`, the sum truncated to `window` terms.
///
/// `L_m(M_m h_m) = L_m((v_m + G_m) h_m) - G_{m+1} L_m h_m` only uses the
/// push-forward of grid functions, so the residual measures equivariance of
/// `h` and the truncation.
pub fn martingale_check(ops: &OperatorPath, obs: LimitObservable, a: i64, steps: usize, window: usize, cfg: &ThermoConfig) -> Result<MartingaleCheck, Error> {
    check_closed(ops)?;
    let b = a + steps as i64;
    let cent = centering(ops, obs, a, b, cfg)?;
    let nf = ops.n as f64;
    let h: Vec<Vec<f64>> = thermo::invariant_measures(ops, a, b, cfg)?.into_iter().map(|mu| mu.into_iter().map(|m| m * nf).collect()).collect();
    let mut cache = GridCache::new(obs, ops.n);
    let vh: Vec<Vec<f64>> = (a..=b)
        .zip(&h)
        .map(|(k, hk)| {
            let v = cache.get(ops, k);
            let c = cent.center(k);
            hk.iter().zip(v.iter()).map(|(d, x)| d * (x - c)).collect()
        })
        .collect();
    // pushed holds L^{m-j}(v_j h_j) for the last `window` values of j
    let mut pushed: Vec<Vec<f64>> = Vec::new();
    let mut gh = vec![0.0; ops.n];
    let (mut residual, mut g_sup) = (0.0f64, 0.0f64);
    for m in 0..steps {
        let l = ops.matrix(a + m as i64);
        let with_g: Vec<f64> = vh[m].iter().zip(&gh).map(|(x, y)| x + y).collect();
        let pushed_vg = l.apply(&with_g);
        let lh = l.apply(&h[m]);
        pushed.push(vh[m].clone());
        if pushed.len() > window {
            pushed.remove(0);
        }
        for p in pushed.iter_mut() {
            *p = l.apply(p);
        }
        let mut next = vec![0.0; ops.n];
        for p in &pushed {
            next.iter_mut().zip(p).for_each(|(d, x)| *d += x);
        }
        let hn = &h[m + 1];
        let g_next: Vec<f64> = next.iter().zip(hn).map(|(x, d)| if *d > 0.0 { x / d } else { 0.0 }).collect();
        let cond = pushed_vg.iter().zip(&g_next).zip(&lh).fold(0.0f64, |r, ((p, g), q)| r.max((p - g * q).abs()));
        residual = residual.max(cond);
        g_sup = g_sup.max(sup_norm(&g_next));
        gh = next;
    }
    Ok(MartingaleCheck { steps, residual, g_sup })
}

#[derive(Debug, Clone)]
pub struct BorelCantelliReport {
    pub center: f64,
    pub constant: f64,
    pub power: f64,
    pub n: usize,
    pub orbits: usize,
    /// `E_n = Σ_{k=1}^n μ_{a+k}(B_k)`.
    pub expected: f64,
    /// Mean number of entries per orbit.
    pub count_mean: f64,
    pub ratio: f64,
    /// Standard error of `ratio` across orbits.
    pub ratio_se: f64,
    /// `E^{-1/2} log^{3/2} E`, the relative size of the almost-sure remainder.
    pub remainder: f64,
    /// `(m, pooled ratio at m)` at decades up to `n`.
    pub trend: Vec<(usize, f64)>,
    pub tol: f64,
}

impl BorelCantelliReport {
    pub fn pass(&self) -> bool {
        (self.ratio - 1.0).abs() <= self.tol
    }
}

pub fn ball_radius(constant: f64, power: f64, k: usize) -> f64 {
    if power == 1.0 {
        return constant / k as f64;
    }
    constant / (k as f64).powf(power)
}

/// Entries of `T^k x` into `B(center, c k^-power)`, `k = 1..=n`, against `E_n`.
///
/// Refuses `power > 1`, where `E_n` stays bounded.
#[allow(clippy::too_many_arguments)]
pub fn borel_cantelli_count(ops: &OperatorPath, a: i64, center: f64, constant: f64, power: f64, n: usize, orbits: usize, tol: f64, seed: u64, cfg: &ThermoConfig) -> Result<BorelCantelliReport, Error> {
    check_closed(ops)?;
    if power > 1.0 {
        return Err(Error::InvalidInput(format!("radius exponent {power} > 1 makes Σ μ(B_k) finite; the shrinking-target count has no normalization")));
    }
    if !(constant > 0.0) || n == 0 || orbits == 0 {
        return Err(Error::InvalidInput("need a positive radius constant, n > 0 and orbits > 0".into()));
    }
    let marks: Vec<usize> = std::iter::successors(Some(100usize), |m| Some(m * 10)).take_while(|&m| m < n).chain(std::iter::once(n)).collect();
    let mut expected_at = Vec::with_capacity(marks.len());
    let mut e = 0.0;
    let mut next = 0;
    for_blocks(a + 1, a + n as i64, cfg.block, |s, t| {
        let mus = thermo::invariant_measures(ops, s, t, cfg)?;
        for (f, mu) in (s..=t).zip(&mus) {
            let k = (f - a) as usize;
            let r = ball_radius(constant, power, k);
            let m = StepMeasure::new(mu);
            e += m.cdf(center + r) - m.cdf(center - r);
            while next < marks.len() && marks[next] == k {
                expected_at.push(e);
                next += 1;
            }
        }
        Ok(())
    })?;
    let start = StepMeasure::new(&thermo::invariant_measures(ops, a, a, cfg)?.remove(0));
    let path = &ops.path;
    let counts: Vec<Vec<usize>> = par_samples(orbits, seed, |rng, _| {
        let mut x = sample_point(&start, rng);
        let mut c = 0usize;
        let mut out = Vec::with_capacity(marks.len());
        let mut next = 0;
        for k in 1..=n {
            x = mc::dithered_step(path.map(a + k as i64 - 1), x, rng);
            if (x - center).abs() < ball_radius(constant, power, k) {
                c += 1;
            }
            if next < marks.len() && marks[next] == k {
                out.push(c);
                next += 1;
            }
        }
        out
    });
    let expected = e;
    if !(expected > 0.0) {
        return Err(Error::Degenerate("the balls carry no invariant mass".into()));
    }
    let last: Vec<f64> = counts.iter().map(|c| *c.last().unwrap() as f64).collect();
    let count_mean = mean(&last);
    let ratio = count_mean / expected;
    let ratio_se = if orbits > 1 {
        let v = last.iter().map(|c| (c - count_mean).powi(2)).sum::<f64>() / (orbits - 1) as f64;
        (v / orbits as f64).sqrt() / expected
    } else {
        f64::INFINITY
    };
    let trend = marks
        .iter()
        .enumerate()
        .map(|(i, &m)| (m, counts.iter().map(|c| c[i] as f64).sum::<f64>() / orbits as f64 / expected_at[i]))
        .collect();
    let remainder = expected.ln().max(1.0).powf(1.5) / expected.sqrt();
    Ok(BorelCantelliReport { center, constant, power, n, orbits, expected, count_mean, ratio, ratio_se, remainder, trend, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{constant_beta_ops, constant_example1_ops};

    fn cfg() -> ThermoConfig {
        ThermoConfig::default()
    }

    #[test]
    fn coboundary_variance_vanishes() {
        let ops = constant_beta_ops(2.0, 0.0, 64, 1.0, 200);
        let v = variance_estimate(&ops, LimitObservable::Coboundary, 0, 50, 20, &cfg()).unwrap();
        assert!(v.sigma2.abs() <= v.tail_bound + 1e-12, "{} vs {}", v.sigma2, v.tail_bound);
    }

    #[test]
    fn doubling_half_indicator_is_independent() {
        // 1_[0,1/2] under the doubling map is a Bernoulli(1/2) sequence: Σ² = 1/4
        let ops = constant_beta_ops(2.0, 0.0, 64, 1.0, 200);
        let v = variance_estimate(&ops, LimitObservable::HalfIndicator, 0, 50, 20, &cfg()).unwrap();
        assert!((v.sigma2 - 0.25).abs() < 1e-12);
        assert!((v.finite_n - 0.25).abs() < 1e-12);
        assert!(v.correlations[1..].iter().all(|c| c.abs() < 1e-13));
    }

    #[test]
    fn coboundary_is_refused_by_clt() {
        let ops = constant_example1_ops(2.0, 256, 1.0, 400);
        let err = clt_check(&ops, LimitObservable::Coboundary, 0, 64, 100, 32, 0.01, 1, &cfg()).unwrap_err();
        assert!(err.to_string().contains("coboundary"));
    }

    #[test]
    fn azuma_trivial_beyond_sup() {
        let ops = constant_example1_ops(2.0, 256, 1.0, 400);
        let r = azuma_bound_check(&ops, LimitObservable::HalfIndicator, 0, &[1.5], &[64], 2000, 3, &cfg()).unwrap();
        assert_eq!(r.rows[0].empirical, 0.0);
        assert_eq!(r.violations(), 0);
    }

    #[test]
    fn martingale_recursion_matches_direct_sum() {
        let ops = constant_example1_ops(2.0, 256, 1.0, 400);
        let m = martingale_check(&ops, LimitObservable::HalfIndicator, 0, 100, 200, &cfg()).unwrap();
        assert!(m.residual < 1e-10, "{}", m.residual);
    }

    #[test]
    fn summable_radii_refused() {
        let ops = constant_example1_ops(2.0, 256, 1.0, 400);
        assert!(borel_cantelli_count(&ops, 0, 0.3, 0.5, 2.0, 100, 4, 0.05, 1, &cfg()).is_err());
    }

    #[test]
    fn constant_radius_is_birkhoff() {
        let ops = constant_beta_ops(3.0, 0.0, 243, 1.0, 20_100);
        let r = borel_cantelli_count(&ops, 0, 0.3, 0.1, 0.0, 20_000, 8, 0.05, 1, &cfg()).unwrap();
        assert!((r.expected - 4000.0).abs() < 1e-6);
        assert!((r.ratio - 1.0).abs() < 0.03, "{}", r.ratio);
    }
}
