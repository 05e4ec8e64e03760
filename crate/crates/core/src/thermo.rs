//! Quenched leading triples `(λ, φ, ν)` for closed and open cocycles, survivor
//! measures, escape rates, conditionally invariant densities and decay rates.
//!
//! `φ` comes from a forward pullback of the constant density and `ν` from a
//! backward sweep of the adjoint starting at Lebesgue. Both are computed on a
//! window `[a, b]`; memory is `O((b - a) n)`, so long ranges go through blocks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::transfer::{dot, mean, sup_norm, GridDensity, HoleLevel, OperatorPath};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoConfig {
    /// Pullback depth on each side of a window.
    pub depth: usize,
    /// Tolerance for the depth certificate, relative to the sup norm.
    pub tol: f64,
    /// Fibers per block for long ranges.
    pub block: usize,
}

impl Default for ThermoConfig {
    fn default() -> Self {
        Self { depth: 40, tol: 1e-9, block: 128 }
    }
}

/// Closed triple on `[a, b]`: `φ_k`, `λ_k` for `k` in `[a, b]` and `ν_k` for `k` in `[a, b+1]`.
#[derive(Debug, Clone)]
pub struct ClosedWindow {
    pub a: i64,
    pub b: i64,
    pub depth: usize,
    phi: Vec<Vec<f64>>,
    nu: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    /// `ν_{k+1}(L_k 1)` from the backward sweep; equals `λ_k` under conformality.
    pub lambda_adjoint: Vec<f64>,
    /// Sup difference between depths `d` and `d + 5` for `φ_a` and `ν_b`.
    pub depth_residual: f64,
    /// `max ||L_k φ_k - λ_k φ_{k+1}||∞` over the window.
    pub equivariance_residual: f64,
}

impl ClosedWindow {
    pub fn phi(&self, k: i64) -> &[f64] {
        &self.phi[(k - self.a) as usize]
    }

    /// Dual weights of `ν_k`, `k` in `[a, b+1]`.
    pub fn nu(&self, k: i64) -> &[f64] {
        &self.nu[(k - self.a) as usize]
    }

    pub fn lambda(&self, k: i64) -> f64 {
        self.lambda[(k - self.a) as usize]
    }

    /// `μ_k` as dual weights: `ν_k ⊙ φ_k`.
    pub fn mu(&self, k: i64) -> Vec<f64> {
        self.nu(k).iter().zip(self.phi(k)).map(|(v, p)| v * p).collect()
    }
}

/// Open triple on `[a, b]`, normalized by `ν_{k,0}(φ_{k,ε}) = 1` and `ν_{k,ε}(φ_{k,ε}) = 1`.
#[derive(Debug, Clone)]
pub struct OpenWindow {
    pub a: i64,
    pub b: i64,
    pub label: f64,
    phi: Vec<Vec<f64>>,
    nu: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub equivariance_residual: f64,
}

impl OpenWindow {
    pub fn phi(&self, k: i64) -> &[f64] {
        &self.phi[(k - self.a) as usize]
    }

    pub fn nu(&self, k: i64) -> &[f64] {
        &self.nu[(k - self.a) as usize]
    }

    pub fn lambda(&self, k: i64) -> f64 {
        self.lambda[(k - self.a) as usize]
    }
}

/// Per-fiber snapshot of the quenched objects.
#[derive(Debug, Clone)]
pub struct ThermoFiberData {
    pub k: i64,
    pub label: Option<f64>,
    pub lambda: f64,
    pub phi: GridDensity,
    pub nu: Vec<f64>,
    pub depth: usize,
    pub residual: f64,
}

fn check_range(ops: &OperatorPath, lo: i64, hi: i64) -> Result<(), Error> {
    if lo < ops.lo() || hi > ops.hi() {
        return Err(Error::WindowOverflow { lo, hi, window: (ops.lo(), ops.hi()) });
    }
    Ok(())
}

/// Backward adjoint sweep from `end` (exclusive start at Lebesgue) down to `stop`,
/// normalized by total mass. Returns the functionals at `[stop, keep_hi]` and the
/// normalizers `ν_{k+1}(L_k 1)` for `k` in `[stop, keep_hi - 1]`.
fn nu_sweep(ops: &OperatorPath, holes: Option<&HoleLevel>, end: i64, stop: i64, keep_hi: i64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut w = ops.leb();
    let mut kept = Vec::new();
    let mut norms = Vec::new();
    if end <= keep_hi {
        kept.push(w.clone());
    }
    for k in (stop..end).rev() {
        w = ops.matrix(k).apply_transpose_open(holes.map(|h| h.mask(k)), &w);
        let c: f64 = w.iter().sum();
        if c > 0.0 {
            w.iter_mut().for_each(|x| *x /= c);
        }
        if k <= keep_hi {
            kept.push(w.clone());
            if k < keep_hi {
                norms.push(c);
            }
        }
    }
    kept.reverse();
    norms.reverse();
    (kept, norms)
}

pub fn closed_window(ops: &OperatorPath, a: i64, b: i64, cfg: &ThermoConfig) -> Result<ClosedWindow, Error> {
    if cfg.depth == 0 || b < a {
        return Err(Error::InvalidInput("thermo windows need depth >= 1 and a <= b".into()));
    }
    let d = cfg.depth as i64;
    check_range(ops, a - d, b + 1 + d)?;
    let (nu, lambda_adjoint) = nu_sweep(ops, None, b + 1 + d, a, b + 1);
    // forward pullback of 1
    let mut f = vec![1.0; ops.n];
    let mut phi = Vec::with_capacity((b - a + 1) as usize);
    for k in (a - d)..b {
        f = ops.matrix(k).apply(&f);
        let c = if k + 1 >= a { dot(&nu[(k + 1 - a) as usize], &f) } else { mean(&f) };
        if !(c > 0.0) {
            return Err(Error::Degenerate(format!("closed cocycle annihilates densities at fiber {k}")));
        }
        f.iter_mut().for_each(|x| *x /= c);
        if k + 1 >= a {
            phi.push(f.clone());
        }
    }
    let mut lambda = Vec::with_capacity(phi.len());
    let mut equiv: f64 = 0.0;
    for k in a..=b {
        let img = ops.matrix(k).apply(&phi[(k - a) as usize]);
        let l = dot(&nu[(k + 1 - a) as usize], &img);
        if k < b {
            let next = &phi[(k + 1 - a) as usize];
            let r = img.iter().zip(next).map(|(x, y)| (x - l * y).abs()).fold(0.0, f64::max);
            equiv = equiv.max(r / sup_norm(next).max(1e-300));
        }
        lambda.push(l);
    }
    let depth_residual = depth_certificate(ops, a, b, cfg, &phi[0], &nu[(b - a) as usize]);
    if depth_residual > cfg.tol.max(1e-12) * 1e3 {
        return Err(Error::NonConvergence { what: format!("closed triple on [{a}, {b}] at depth {}", cfg.depth), residual: depth_residual });
    }
    Ok(ClosedWindow { a, b, depth: cfg.depth, phi, nu, lambda, lambda_adjoint, depth_residual, equivariance_residual: equiv })
}

/// Recompute `φ_a` and `ν_b` from 5 more (or fewer) steps and report the sup difference.
fn depth_certificate(ops: &OperatorPath, a: i64, b: i64, cfg: &ThermoConfig, phi_a: &[f64], nu_b: &[f64]) -> f64 {
    let d = cfg.depth as i64;
    let alt_back = if a - d - 5 >= ops.lo() { d + 5 } else { (d - 5).max(1) };
    let alt_fwd = if b + 1 + d + 5 <= ops.hi() { d + 5 } else { (d - 5).max(1) };
    if alt_back == d || alt_fwd == d {
        return 0.0;
    }
    // φ_a normalized by Lebesgue for comparison; ν_b by total mass
    let mut f = vec![1.0; ops.n];
    for k in (a - alt_back)..a {
        f = ops.matrix(k).apply(&f);
        let c = mean(&f);
        f.iter_mut().for_each(|x| *x /= c);
    }
    let pa_mean = mean(phi_a);
    let rphi = f.iter().zip(phi_a).map(|(x, y)| (x - y / pa_mean).abs()).fold(0.0, f64::max) / sup_norm(&f);
    let (w, _) = nu_sweep(ops, None, b + alt_fwd, b, b);
    let rnu = w[0].iter().zip(nu_b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    rphi.max(rnu)
}

/// Open triple on `[a, b]`. Needs the closed window on at least `[a, b]`.
pub fn open_window(ops: &OperatorPath, closed: &ClosedWindow, holes: &HoleLevel, cfg: &ThermoConfig) -> Result<OpenWindow, Error> {
    let (a, b) = (closed.a, closed.b);
    let d = cfg.depth as i64;
    check_range(ops, a - d, b + 1 + d)?;
    let mut f = vec![1.0; ops.n];
    let mut phi = Vec::with_capacity((b - a + 1) as usize);
    for k in (a - d)..b {
        f = ops.matrix(k).apply_open(Some(holes.mask(k)), &f);
        let c = if k + 1 >= a { dot(closed.nu(k + 1), &f) } else { mean(&f) };
        if !(c > 0.0) {
            return Err(Error::Degenerate(format!("open cocycle kills every density at fiber {k}")));
        }
        f.iter_mut().for_each(|x| *x /= c);
        if k + 1 >= a {
            phi.push(f.clone());
        }
    }
    let (mut nu, _) = nu_sweep(ops, Some(holes), b + 1 + d, a, b);
    let mut lambda = Vec::with_capacity(phi.len());
    let mut equiv: f64 = 0.0;
    for k in a..=b {
        let i = (k - a) as usize;
        let c = dot(&nu[i], &phi[i]);
        if c > 0.0 {
            nu[i].iter_mut().for_each(|x| *x /= c);
        }
        let img = ops.matrix(k).apply_open(Some(holes.mask(k)), &phi[i]);
        let l = dot(closed.nu(k + 1), &img);
        if k < b {
            let next = &phi[i + 1];
            let r = img.iter().zip(next).map(|(x, y)| (x - l * y).abs()).fold(0.0, f64::max);
            equiv = equiv.max(r / sup_norm(next).max(1e-300));
        }
        lambda.push(l);
    }
    Ok(OpenWindow { a, b, label: holes.label, phi, nu, lambda, equivariance_residual: equiv })
}

/// Weights of the invariant probabilities `μ_k = φ_k ν_k` for `k` in `[a, b]`.
///
/// Near the ends of the path the pullback depth is clamped to what the window
/// offers, so edge fibers carry a truncation error of order `κ^depth`.
pub fn invariant_measures(ops: &OperatorPath, a: i64, b: i64, cfg: &ThermoConfig) -> Result<Vec<Vec<f64>>, Error> {
    if a < ops.lo() || b > ops.hi() || b < a {
        return Err(Error::WindowOverflow { lo: a, hi: b, window: (ops.lo(), ops.hi()) });
    }
    let end = (b + cfg.depth as i64).min(ops.hi());
    let (nu, _) = nu_sweep(ops, None, end, a, b);
    let start = (a - cfg.depth as i64).max(ops.lo());
    let mut f = vec![1.0; ops.n];
    let mut out = Vec::with_capacity((b - a + 1) as usize);
    for k in start..=b {
        if k > start {
            f = ops.matrix(k - 1).apply(&f);
            let c = mean(&f);
            if !(c > 0.0) {
                return Err(Error::Degenerate(format!("closed cocycle annihilates densities at fiber {k}")));
            }
            f.iter_mut().for_each(|x| *x /= c);
        }
        if k >= a {
            let w = &nu[(k - a) as usize];
            let mut m: Vec<f64> = w.iter().zip(&f).map(|(x, y)| x * y).collect();
            let z: f64 = m.iter().sum();
            m.iter_mut().for_each(|x| *x /= z);
            out.push(m);
        }
    }
    Ok(out)
}

/// `(φ_k, λ_k)`; open when `holes` is given.
pub fn equivariant_density(ops: &OperatorPath, holes: Option<&HoleLevel>, k: i64, cfg: &ThermoConfig) -> Result<ThermoFiberData, Error> {
    let closed = closed_window(ops, k, k, cfg)?;
    Ok(match holes {
        None => ThermoFiberData {
            k,
            label: None,
            lambda: closed.lambda(k),
            phi: GridDensity { values: closed.phi(k).to_vec() },
            nu: closed.nu(k).to_vec(),
            depth: cfg.depth,
            residual: closed.depth_residual,
        },
        Some(h) => {
            let open = open_window(ops, &closed, h, cfg)?;
            ThermoFiberData {
                k,
                label: Some(h.label),
                lambda: open.lambda(k),
                phi: GridDensity { values: open.phi(k).to_vec() },
                nu: open.nu(k).to_vec(),
                depth: cfg.depth,
                residual: open.equivariance_residual.max(closed.depth_residual),
            }
        }
    })
}

/// Dual weights of `ν_k` (closed: probability; open: scaled so `ν_ε(φ_ε) = 1`).
pub fn conformal_functional(ops: &OperatorPath, holes: Option<&HoleLevel>, k: i64, cfg: &ThermoConfig) -> Result<Vec<f64>, Error> {
    Ok(equivariant_density(ops, holes, k, cfg)?.nu)
}

/// Per-fiber `log λ_{k,0}` and, with holes, `log λ_{k,ε}` and `μ_{k,0}(H_k)` over `[a, b]`, in blocks.
#[derive(Debug, Clone, Default)]
pub struct MultiplierSeries {
    pub a: i64,
    pub log_closed: Vec<f64>,
    pub log_open: Vec<f64>,
    pub hole_measure: Vec<f64>,
    pub max_equivariance: f64,
    pub max_conformality: f64,
    pub max_depth_residual: f64,
}

pub fn multiplier_series(ops: &OperatorPath, holes: Option<&HoleLevel>, a: i64, b: i64, cfg: &ThermoConfig) -> Result<MultiplierSeries, Error> {
    let mut out = MultiplierSeries { a, ..Default::default() };
    for_blocks(a, b, cfg.block, |s, e| {
        let closed = closed_window(ops, s, e, cfg)?;
        out.max_depth_residual = out.max_depth_residual.max(closed.depth_residual);
        out.max_equivariance = out.max_equivariance.max(closed.equivariance_residual);
        for k in s..=e {
            let l = closed.lambda(k);
            out.log_closed.push(l.ln());
            out.max_conformality = out.max_conformality.max((closed.lambda_adjoint[(k - s) as usize] - l).abs() / l);
        }
        if let Some(h) = holes {
            let open = open_window(ops, &closed, h, cfg)?;
            out.max_equivariance = out.max_equivariance.max(open.equivariance_residual);
            for k in s..=e {
                out.log_open.push(open.lambda(k).ln());
                out.hole_measure.push(h.mask(k).pair_hole(closed.nu(k), closed.phi(k)));
            }
        }
        Ok(())
    })?;
    Ok(out)
}

/// Run `f(start, end)` over consecutive blocks covering `[a, b]`.
pub fn for_blocks(a: i64, b: i64, block: usize, mut f: impl FnMut(i64, i64) -> Result<(), Error>) -> Result<(), Error> {
    let mut s = a;
    while s <= b {
        let e = (s + block.max(1) as i64 - 1).min(b);
        f(s, e)?;
        s = e + 1;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// Conformal measure `ν_{k,0}`.
    Nu,
    /// Invariant measure `μ_{k,0}`.
    Mu,
}

#[derive(Debug, Clone)]
pub struct Survivor {
    /// `(n, ν_{k,0}(X_{k,n-1,ε}))` at each checkpoint.
    pub curve_nu: Vec<(usize, f64)>,
    /// `(n, μ_{k,0}(X_{k,n-1,ε}))` at each checkpoint.
    pub curve_mu: Vec<(usize, f64)>,
    /// `ν_{k,ε}(1)`.
    pub nu_pairing: f64,
    /// `ν_{k,ε}(φ_{k,0})`.
    pub mu_pairing: f64,
    /// `log(λ^n_ε / λ^n_0)` at the last checkpoint.
    pub log_multiplier_ratio: f64,
}

impl Survivor {
    pub fn curve(&self, which: Reference) -> &[(usize, f64)] {
        match which {
            Reference::Nu => &self.curve_nu,
            Reference::Mu => &self.curve_mu,
        }
    }

    pub fn value(&self, which: Reference) -> f64 {
        self.curve(which).last().map_or(1.0, |c| c.1)
    }

    /// `(λ^n_ε / λ^n_0) ν_{k,ε}(1 or φ_{k,0})` at the last checkpoint.
    pub fn prediction(&self, which: Reference) -> f64 {
        let p = match which {
            Reference::Nu => self.nu_pairing,
            Reference::Mu => self.mu_pairing,
        };
        self.log_multiplier_ratio.exp() * p
    }
}

/// Survivor measures of `X_{k,n-1,ε}` under `ν_{k,0}` and `μ_{k,0}` at each checkpoint `n`.
pub fn survivor_curve(ops: &OperatorPath, holes: &HoleLevel, k: i64, checkpoints: &[usize], cfg: &ThermoConfig) -> Result<Survivor, Error> {
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    check_range(ops, k - cfg.depth as i64, k + last as i64 + 1 + cfg.depth as i64)?;
    let start = closed_window(ops, k, k, cfg)?;
    let phi_k = start.phi(k).to_vec();
    let mut f_nu = vec![1.0; ops.n];
    let mut f_mu = phi_k.clone();
    let mut g = phi_k.clone();
    let (mut curve_nu, mut curve_mu) = (Vec::new(), Vec::new());
    let mut sorted: Vec<usize> = checkpoints.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut next = sorted.iter().peekable();
    while next.peek() == Some(&&0) {
        curve_nu.push((0, 1.0));
        curve_mu.push((0, 1.0));
        next.next();
    }
    for step in 1..=last {
        let j = k + step as i64 - 1;
        let mask = Some(holes.mask(j));
        f_nu = ops.matrix(j).apply_open(mask, &f_nu);
        f_mu = ops.matrix(j).apply_open(mask, &f_mu);
        g = ops.matrix(j).apply(&g);
        let c = mean(&g);
        for v in [&mut f_nu, &mut f_mu, &mut g] {
            v.iter_mut().for_each(|x| *x /= c);
        }
        if next.peek() == Some(&&step) {
            next.next();
            let at = k + step as i64;
            let (nu, _) = nu_sweep(ops, None, at + cfg.depth as i64, at, at);
            let z = dot(&nu[0], &g);
            curve_nu.push((step, dot(&nu[0], &f_nu) / z));
            curve_mu.push((step, dot(&nu[0], &f_mu) / z));
        }
    }
    let log_ratio = if last > 0 {
        let series = multiplier_series(ops, Some(holes), k, k + last as i64 - 1, cfg)?;
        series.log_open.iter().zip(&series.log_closed).map(|(o, c)| o - c).sum()
    } else {
        0.0
    };
    let open_k = open_window(ops, &start, holes, cfg)?;
    Ok(Survivor {
        curve_nu,
        curve_mu,
        nu_pairing: open_k.nu(k).iter().sum::<f64>(),
        mu_pairing: dot(open_k.nu(k), &phi_k),
        log_multiplier_ratio: log_ratio,
    })
}

/// Single survivor values at `n` steps.
pub fn survivor_measure(ops: &OperatorPath, holes: &HoleLevel, k: i64, steps: usize, cfg: &ThermoConfig) -> Result<Survivor, Error> {
    survivor_curve(ops, holes, k, &[steps], cfg)
}

#[derive(Debug, Clone)]
pub struct EscapeRateRow {
    pub label: f64,
    /// `-(log S(n) - log S(n/2)) / (n/2)` from the survivor curve.
    pub decay_fit: f64,
    /// Window average of `log λ_0 - log λ_ε`.
    pub birkhoff: f64,
    /// Window average of `μ_{k,0}(H_k)`.
    pub hole_measure: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct EscapeRateReport {
    pub rows: Vec<EscapeRateRow>,
    /// Ratio extrapolated to vanishing hole measure (linear in `μ(H)`).
    pub extrapolated: f64,
}

/// Escape rates along a ladder of `(operators, holes)` pairs, from fiber `k` over `horizon` steps.
pub fn escape_rate(levels: &[(&OperatorPath, &HoleLevel)], k: i64, horizon: usize, cfg: &ThermoConfig) -> Result<EscapeRateReport, Error> {
    let mut rows = Vec::new();
    for &(ops, holes) in levels {
        let half = horizon / 2;
        let surv = survivor_curve(ops, holes, k, &[half, horizon], cfg)?;
        let (s1, s2) = (surv.curve_nu[0].1, surv.curve_nu[1].1);
        let decay_fit = -(s2.ln() - s1.ln()) / (horizon - half) as f64;
        let series = multiplier_series(ops, Some(holes), k + half as i64, k + horizon as i64 - 1, cfg)?;
        let m = series.log_closed.len() as f64;
        let birkhoff = series.log_closed.iter().zip(&series.log_open).map(|(c, o)| c - o).sum::<f64>() / m;
        let hole_measure = series.hole_measure.iter().sum::<f64>() / m;
        rows.push(EscapeRateRow { label: holes.label, decay_fit, birkhoff, hole_measure, ratio: birkhoff / hole_measure });
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.hole_measure, r.ratio)).collect();
    let extrapolated = crate::extrapolate::neville_at_zero(&pts[pts.len().saturating_sub(3)..]);
    Ok(EscapeRateReport { rows, extrapolated })
}

/// Conditionally invariant density on fiber `k` and its multiplier.
#[derive(Debug, Clone)]
pub struct ConditionallyInvariant {
    /// Density w.r.t. `ν_{k,0}`, zero on the hole.
    pub density: Vec<f64>,
    pub rho: f64,
    /// `max_A |ϱ_{k+1}(A) - ϱ_k(T^-1(A ∩ J_{k+1})) / ϱ_k(T^-1 J_{k+1})|` over test intervals.
    pub residual: f64,
    pub density_min: f64,
    pub density_max: f64,
}

fn cond_density(closed_nu: &[f64], mask: &crate::transfer::HoleMask, h: &[f64]) -> Result<Vec<f64>, Error> {
    let mut d = h.to_vec();
    mask.restrict_in_place(&mut d);
    let z = dot(closed_nu, &d);
    if !(z > 0.0) {
        return Err(Error::Degenerate("hole swallows the support of the conditional density".into()));
    }
    d.iter_mut().for_each(|x| *x /= z);
    Ok(d)
}

pub fn conditionally_invariant(ops: &OperatorPath, holes: &HoleLevel, k: i64, cfg: &ThermoConfig) -> Result<ConditionallyInvariant, Error> {
    let closed = closed_window(ops, k, k + 1, cfg)?;
    let open = open_window(ops, &closed, holes, cfg)?;
    let d0 = cond_density(closed.nu(k), holes.mask(k), open.phi(k))?;
    let d1 = cond_density(closed.nu(k + 1), holes.mask(k + 1), open.phi(k + 1))?;
    // push ϱ_k forward as a density against ν_{k+1}
    let pushed = ops.matrix(k).apply(&d0);
    let nu1 = closed.nu(k + 1);
    let mask1 = holes.mask(k + 1).to_dense();
    let landed: f64 = (0..ops.n).map(|i| nu1[i] * pushed[i] * mask1[i]).sum();
    let tests = ops.n.min(32);
    let mut residual: f64 = 0.0;
    for t in 0..tests {
        let (lo, hi) = (t * ops.n / tests, (t + 1) * ops.n / tests);
        let lhs: f64 = (lo..hi).map(|i| nu1[i] * d1[i]).sum();
        let rhs: f64 = (lo..hi).map(|i| nu1[i] * pushed[i] * mask1[i]).sum::<f64>() / landed;
        residual = residual.max((lhs - rhs).abs());
    }
    let outside: Vec<f64> = d0.iter().zip(holes.mask(k).to_dense()).filter(|(_, m)| *m >= 1.0).map(|(x, _)| *x).collect();
    Ok(ConditionallyInvariant {
        density_min: outside.iter().copied().fold(f64::INFINITY, f64::min),
        density_max: outside.iter().copied().fold(0.0, f64::max),
        density: d0,
        rho: open.lambda(k),
        residual,
    })
}

#[derive(Debug, Clone)]
pub struct DecayRate {
    pub kappa: f64,
    pub d_const: f64,
    /// `(n, max over probes of ||f_n||∞ / ||f_0||∞)`.
    pub curve: Vec<(usize, f64)>,
}

/// Decay of `λ^-n L^n f` for centered probes (`ν_{k}(f) = 0`, open or closed).
pub fn decay_rate_with_probes(ops: &OperatorPath, holes: Option<&HoleLevel>, k: i64, probes: &[Vec<f64>], steps: usize, cfg: &ThermoConfig) -> Result<DecayRate, Error> {
    let closed = closed_window(ops, k, k + steps as i64, cfg)?;
    let open = match holes {
        Some(h) => Some(open_window(ops, &closed, h, cfg)?),
        None => None,
    };
    let nu_k: Vec<f64> = match &open {
        Some(o) => o.nu(k).to_vec(),
        None => closed.nu(k).to_vec(),
    };
    for (i, f) in probes.iter().enumerate() {
        let c = dot(&nu_k, f);
        if c.abs() > 1e-10 * sup_norm(f).max(1e-300) {
            return Err(Error::InvalidInput(format!("probe {i} is not centered: ν(f) = {c:e}")));
        }
    }
    let mut worst = vec![0.0f64; steps + 1];
    for f0 in probes {
        let n0 = sup_norm(f0);
        let mut f = f0.clone();
        worst[0] = worst[0].max(1.0);
        for s in 1..=steps {
            let j = k + s as i64 - 1;
            let l = match &open {
                Some(o) => o.lambda(j),
                None => closed.lambda(j),
            };
            f = ops.matrix(j).apply_open(holes.map(|h| h.mask(j)), &f);
            f.iter_mut().for_each(|x| *x /= l);
            worst[s] = worst[s].max(sup_norm(&f) / n0);
        }
    }
    // fit on the part above round-off
    let pts: Vec<(f64, f64)> = worst.iter().enumerate().skip(1).filter(|(_, &v)| v > 1e-11).map(|(n, &v)| (n as f64, v.ln())).collect();
    let kappa = if pts.len() >= 2 {
        let tail = &pts[pts.len() / 2..];
        let tail = if tail.len() >= 2 { tail } else { &pts[..] };
        let mx = tail.iter().map(|p| p.0).sum::<f64>() / tail.len() as f64;
        let my = tail.iter().map(|p| p.1).sum::<f64>() / tail.len() as f64;
        let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
        (sxy / sxx).exp().min(1.0)
    } else {
        // decayed to round-off immediately
        worst.get(1).copied().unwrap_or(0.0).max(1e-16)
    };
    let d_const = worst.iter().enumerate().filter(|(_, &v)| v > 1e-11).map(|(n, &v)| v / kappa.powi(n as i32)).fold(1.0, f64::max);
    Ok(DecayRate { kappa, d_const, curve: worst.into_iter().enumerate().collect() })
}

/// Random probes centered against `ν_k` by subtracting `ν_k(f) φ_k`.
pub fn decay_rate(ops: &OperatorPath, holes: Option<&HoleLevel>, k: i64, count: usize, steps: usize, seed: u64, cfg: &ThermoConfig) -> Result<DecayRate, Error> {
    let data = equivariant_density(ops, holes, k, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            let mut f: Vec<f64> = (0..ops.n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c = dot(&data.nu, &f);
            f.iter_mut().zip(&data.phi.values).for_each(|(x, p)| *x -= c * p);
            f
        })
        .collect();
    decay_rate_with_probes(ops, holes, k, &probes, steps, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::constant_example1_ops;
    use crate::maps::HoleSpec;

    fn cfg() -> ThermoConfig {
        ThermoConfig { depth: 30, tol: 1e-9, block: 64 }
    }

    #[test]
    fn example1_closed_triple_is_lebesgue() {
        let ops = constant_example1_ops(2.0, 100, 1.0, 80);
        let w = closed_window(&ops, -5, 5, &cfg()).unwrap();
        for k in -5..=5 {
            assert!((w.lambda(k) - 1.0).abs() < 1e-13);
            assert!(w.phi(k).iter().all(|x| (x - 1.0).abs() < 1e-12));
            assert!(w.nu(k).iter().all(|x| (x - 0.01).abs() < 1e-14));
        }
    }

    #[test]
    fn counting_weight_multiplier() {
        let ops = crate::presets::constant_beta_ops(3.0, 0.0, 30, 0.0, 80);
        let w = closed_window(&ops, 0, 2, &cfg()).unwrap();
        assert!((w.lambda(0) - 3.0).abs() < 1e-12);
        assert!(w.phi(0).iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn open_multiplier_first_order() {
        let ops = constant_example1_ops(2.0, 200, 1.0, 120);
        let h = HoleSpec::new(vec![(0.49, 0.51)]).unwrap();
        let holes = HoleLevel::new(1.0, ops.path.back, vec![h; ops.path.len()], ops.n);
        let d = equivariant_density(&ops, Some(&holes), 0, &cfg()).unwrap();
        // constant cocycle: λ_ε is the Perron root of the open matrix
        let open = crate::transfer::open_operator(ops.matrix(0), holes.mask(0)).unwrap();
        let mut v = vec![1.0; 200];
        let mut root = 0.0;
        for _ in 0..2000 {
            let w = open.apply(&v);
            root = w.iter().sum::<f64>() / v.iter().sum::<f64>();
            let s: f64 = w.iter().sum();
            v = w.into_iter().map(|x| x / s * 200.0).collect();
        }
        assert!((d.lambda - root).abs() < 1e-10);
        assert!((d.lambda - 0.99).abs() < 2e-3);
    }

    #[test]
    fn survivor_one_step() {
        let ops = constant_example1_ops(2.0, 100, 1.0, 80);
        let mut specs = vec![HoleSpec::empty(); ops.path.len()];
        specs[(0 + ops.path.back) as usize] = HoleSpec::new(vec![(0.49, 0.51)]).unwrap();
        let holes = HoleLevel::new(1.0, ops.path.back, specs, ops.n);
        let s = survivor_measure(&ops, &holes, 0, 1, &cfg()).unwrap();
        assert!((s.value(Reference::Mu) - 0.98).abs() < 1e-13);
        let empty = HoleLevel::new(1.0, ops.path.back, vec![HoleSpec::empty(); ops.path.len()], ops.n);
        assert!((survivor_measure(&ops, &empty, 0, 10, &cfg()).unwrap().value(Reference::Nu) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn decay_on_four_cells() {
        let ops = constant_example1_ops(2.0, 4, 1.0, 80);
        let r = decay_rate(&ops, None, 0, 5, 20, 1, &cfg()).unwrap();
        assert!(r.kappa <= 0.5 + 1e-9, "{}", r.kappa);
        let phi = vec![1.0; 4];
        assert!(decay_rate_with_probes(&ops, None, 0, &[phi], 5, &cfg()).is_err());
    }

    #[test]
    fn zero_mask_is_degenerate() {
        let ops = constant_example1_ops(2.0, 20, 1.0, 80);
        let full = HoleSpec::new(vec![(0.0, 1.0)]).unwrap();
        let holes = HoleLevel::new(1.0, ops.path.back, vec![full; ops.path.len()], ops.n);
        assert!(conditionally_invariant(&ops, &holes, 0, &cfg()).is_err());
    }
}
