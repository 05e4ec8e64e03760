//! Monte Carlo orbits of the random system: start points drawn from a grid
//! density, dithered iteration, first hitting times of the holes, and
//! Kolmogorov–Smirnov distances with right censoring.
//!
//! Orbits of piecewise-expanding maps lose one bit per doubling in floating
//! point, and orbits of integer-slope maps collapse onto dyadic rationals
//! after ~53 steps. Each step therefore adds a uniform kick of width
//! [`DITHER`], reflected back into `[0, 1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Exp};

use crate::evt::{Level, StepMeasure};
use crate::maps::PiecewiseAffineMap;
use crate::thermo::{self, Reference, ThermoConfig};
use crate::Error;

/// Width of the per-step kick.
pub const DITHER: f64 = 1.0 / (1u64 << 40) as f64;

const CHUNK: usize = 4096;

/// Folds `y` into `[0, 1)` by reflection at both ends.
pub fn reflect(y: f64) -> f64 {
    let y = if y < 0.0 { -y } else if y >= 1.0 { 2.0 - y } else { y };
    y.clamp(0.0, 1.0 - f64::EPSILON)
}

pub fn dithered_step(map: &PiecewiseAffineMap, x: f64, rng: &mut impl Rng) -> f64 {
    reflect(map.eval(x) + DITHER * (rng.random::<f64>() - 0.5))
}

/// Inverse-CDF draw, uniform inside the chosen cell.
pub fn sample_point(measure: &StepMeasure, rng: &mut impl Rng) -> f64 {
    measure.quantile(rng.random::<f64>()).min(1.0 - f64::EPSILON)
}

/// Stream `chunk` of the generator keyed by `seed`.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Runs `f(rng, i)` for `i < samples` in fixed chunks, each with its own
/// stream. The output does not depend on the number of worker threads.
pub fn par_samples<T, F>(samples: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c as u64);
            let hi = ((c + 1) * CHUNK).min(samples);
            (c * CHUNK..hi).map(|i| f(&mut rng, i)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

/// KS distance between a sample of size `total` and `cdf`, where only the
/// sorted values in `observed` are known and the other `total - observed.len()`
/// points lie above `cap`.
pub fn ks_censored(observed: &[f64], total: usize, cap: Option<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    let m = total as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < observed.len() {
        let x = observed[i];
        let mut j = i;
        while j < observed.len() && observed[j] == x {
            j += 1;
        }
        let f = cdf(x);
        d = d.max((j as f64 / m - f).abs()).max((f - i as f64 / m).abs());
        i = j;
    }
    if let Some(c) = cap {
        if observed.len() < total {
            d = d.max((cdf(c) - observed.len() as f64 / m).abs());
        }
    }
    d
}

pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    ks_censored(sorted, sorted.len(), None, cdf)
}

/// First-hit time `τ ≥ 1` of the orbit started at fiber `k`: the least `n`
/// with `T^{n-1} x` in the hole of fiber `k + n - 1`. `None` past `cap` steps.
pub fn first_hit(level: &Level, k: i64, x: f64, cap: usize, rng: &mut impl Rng) -> Option<usize> {
    let path = &level.ops.path;
    let mut x = x;
    for j in 0..cap {
        let f = k + j as i64;
        if level.holes.spec(f).contains(x) {
            return Some(j + 1);
        }
        x = dithered_step(path.map(f), x, rng);
    }
    None
}

#[derive(Debug, Clone)]
pub struct SurvivalRow {
    pub steps: usize,
    /// Fraction of orbits with `τ > steps`.
    pub mc: f64,
    /// `μ_k(no hit in the first `steps` fibers)` from masked operators.
    pub operator: f64,
    pub sigma: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct HittingReport {
    pub big_n: f64,
    pub fiber: i64,
    pub samples: usize,
    pub cap: usize,
    /// Orbits still outside the holes after `cap` steps.
    pub censored: usize,
    pub rate: f64,
    /// KS distance of `τ / N` to `Exp(rate)`.
    pub ks: f64,
    pub ks_tol: f64,
    /// `P(τ > N)` and its target `exp(-rate)`.
    pub tail_mc: f64,
    pub tail_target: f64,
    pub tail_sigma: f64,
    pub survival: Vec<SurvivalRow>,
    /// Sorted uncensored scaled times `τ / N`.
    pub scaled: Vec<f64>,
}

impl HittingReport {
    pub fn ks_pass(&self) -> bool {
        self.ks < self.ks_tol
    }

    pub fn tail_pass(&self) -> bool {
        (self.tail_mc - self.tail_target).abs() <= 3.0 * self.tail_sigma
    }

    pub fn survival_pass(&self) -> bool {
        self.survival.iter().all(|r| r.pass)
    }

    /// Empirical `P(τ > n)`, counting censored orbits as survivors.
    pub fn empirical_survival(&self, n: usize) -> f64 {
        let below = self.scaled.partition_point(|&s| s * self.big_n <= n as f64 + 1e-9);
        1.0 - below as f64 / self.samples as f64
    }
}

fn binomial_sigma(p: f64, samples: usize) -> f64 {
    (p * (1.0 - p) / samples as f64).sqrt().max(1.0 / samples as f64)
}

#[derive(Debug, Clone)]
pub struct HittingOptions {
    pub samples: usize,
    pub checkpoints: Vec<usize>,
    pub cap: usize,
    pub rate: f64,
    pub ks_tol: f64,
    pub seed: u64,
}

/// Simulates hitting times of `level`'s holes from `μ_k` starts and compares
/// them with `Exp(rate)` after scaling by `N`, and with the operator survivor
/// curve at each checkpoint.
pub fn hitting_time_mc(level: &Level, k: i64, opts: &HittingOptions, cfg: &ThermoConfig) -> Result<HittingReport, Error> {
    if !(opts.rate > 0.0) || opts.samples == 0 || opts.cap == 0 {
        return Err(Error::InvalidInput("hitting_time_mc needs rate > 0, samples > 0 and cap > 0".into()));
    }
    let path = &level.ops.path;
    let last = k + opts.cap as i64;
    if !path.contains(k) || !path.contains(last) {
        return Err(Error::WindowOverflow { lo: k, hi: last, window: (-path.back, path.forward) });
    }
    let mu = thermo::invariant_measures(&level.ops, k, k, cfg)?.remove(0);
    let start = StepMeasure::new(&mu);
    let times: Vec<Option<usize>> = par_samples(opts.samples, opts.seed, |rng, _| {
        let x = sample_point(&start, rng);
        first_hit(level, k, x, opts.cap, rng)
    });

    let mut hits: Vec<usize> = times.iter().flatten().copied().collect();
    hits.sort_unstable();
    let censored = opts.samples - hits.len();
    let big_n = level.big_n;
    let scaled: Vec<f64> = hits.iter().map(|&t| t as f64 / big_n).collect();
    let exp = Exp::new(opts.rate).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let ks = ks_censored(&scaled, opts.samples, Some(opts.cap as f64 / big_n), |x| exp.cdf(x));

    let survivors = |n: usize| 1.0 - hits.partition_point(|&t| t <= n) as f64 / opts.samples as f64;
    let mut checks: Vec<usize> = opts.checkpoints.iter().copied().filter(|&c| c <= opts.cap).collect();
    checks.sort_unstable();
    checks.dedup();
    let survival = if checks.is_empty() {
        Vec::new()
    } else {
        let op = thermo::survivor_curve(&level.ops, &level.holes, k, &checks, cfg)?;
        op.curve(Reference::Mu)
            .iter()
            .map(|&(steps, operator)| {
                let mc = survivors(steps);
                let sigma = binomial_sigma(operator, opts.samples);
                SurvivalRow { steps, mc, operator, sigma, pass: (mc - operator).abs() <= 3.0 * sigma }
            })
            .collect()
    };

    let n_steps = big_n.round() as usize;
    let tail_mc = survivors(n_steps);
    let tail_target = (-opts.rate).exp();
    Ok(HittingReport {
        big_n,
        fiber: k,
        samples: opts.samples,
        cap: opts.cap,
        censored,
        rate: opts.rate,
        ks,
        ks_tol: opts.ks_tol,
        tail_mc,
        tail_target,
        tail_sigma: binomial_sigma(tail_target, opts.samples),
        survival,
        scaled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_stays_inside() {
        assert_eq!(reflect(0.25), 0.25);
        assert_eq!(reflect(-0.1), 0.1);
        assert!((reflect(1.1) - 0.9).abs() < 1e-15);
        assert!(reflect(1.0) < 1.0);
    }

    #[test]
    fn chunked_streams_are_reproducible() {
        let a: Vec<f64> = par_samples(10_000, 5, |rng, _| rng.random());
        let b: Vec<f64> = par_samples(10_000, 5, |rng, _| rng.random());
        assert_eq!(a, b);
        let c: Vec<f64> = par_samples(10_000, 6, |rng, _| rng.random());
        assert_ne!(a, c);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let m = 1000;
        let xs: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / m as f64).abs() < 1e-12);
    }

    #[test]
    fn censoring_counts_mass_above_cap() {
        // half the sample observed below 0.5, the rest censored: exact for U(0,1)
        let m = 1000;
        let xs: Vec<f64> = (0..m / 2).map(|i| (i as f64 + 0.5) / m as f64).collect();
        let d = ks_censored(&xs, m, Some(0.5), |x| x.clamp(0.0, 1.0));
        assert!(d <= 0.5 / m as f64 + 1e-12);
        let wrong = ks_censored(&xs, m, Some(0.9), |x| x.clamp(0.0, 1.0));
        assert!((wrong - 0.4).abs() < 1e-12);
    }

    #[test]
    fn sampler_follows_step_density() {
        let m = StepMeasure::new(&[0.75, 0.25]);
        let xs: Vec<f64> = par_samples(40_000, 2, |rng, _| sample_point(&m, rng));
        let left = xs.iter().filter(|&&x| x < 0.5).count() as f64 / xs.len() as f64;
        assert!((left - 0.75).abs() < 0.01);
    }
}
