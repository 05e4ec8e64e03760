//! Finite-dimensional oracle for the first-order eigenvalue expansion: strictly
//! positive matrix cocycles with masked perturbations, their exact leading triples,
//! and the Δ, η, q^(k), θ ledger.
//!
//! In finite dimension any perturbation with `η/Δ` bounded has `q^(k)_ε = O(ε)`, so
//! the limit θ is 1; the content of the oracle is that the finite-ε identities hold
//! to round-off and that `(λ_0 - λ_ε)/Δ` converges to θ at first order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::extrapolate::neville_at_zero;
use crate::report::{Row, Table};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskRule {
    /// One random coordinate per fiber; its column is scaled by `1 - cε` with `c ∈ [1/2, 1]`.
    Coordinate,
    /// As `Coordinate`, but fibers divisible by `period` are left unperturbed.
    CoordinateWithGaps { period: usize },
    /// No perturbation at all.
    Identity,
}

/// Closed matrices on fibers `[-back, forward]` and, for each ε of a decreasing
/// ladder, perturbed matrices on the same fibers.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCocycle {
    pub dim: usize,
    pub back: i64,
    pub forward: i64,
    pub closed: Vec<DMatrix<f64>>,
    pub eps: Vec<f64>,
    /// `perturbed[e][slot]`.
    pub perturbed: Vec<Vec<DMatrix<f64>>>,
}

impl MatrixCocycle {
    fn slot(&self, k: i64) -> usize {
        assert!(k >= -self.back && k <= self.forward, "fiber {k} outside [{}, {}]", -self.back, self.forward);
        (k + self.back) as usize
    }

    /// Closed operator for `level = None`, otherwise the operator at `eps[level]`.
    pub fn op(&self, level: Option<usize>, k: i64) -> &DMatrix<f64> {
        let s = self.slot(k);
        match level {
            None => &self.closed[s],
            Some(e) => &self.perturbed[e][s],
        }
    }

    /// `L_0 - L_ε` at fiber `k`.
    pub fn difference(&self, level: usize, k: i64) -> DMatrix<f64> {
        self.op(None, k) - self.op(Some(level), k)
    }

    /// `sup_ε ‖L_ε‖` in the max norm at fiber `k`.
    pub fn norm_bound(&self, k: i64) -> f64 {
        let inf_norm = |m: &DMatrix<f64>| m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
        (0..self.eps.len()).map(|e| inf_norm(self.op(Some(e), k))).fold(inf_norm(self.op(None, k)), f64::max)
    }

    fn check_ladder(eps: &[f64]) -> Result<(), Error> {
        if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0 && e <= 1.0)) || eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidInput("ε ladder must be nonempty, strictly decreasing and inside (0, 1]".into()));
        }
        Ok(())
    }
}

/// Entries i.i.d. uniform in `[1/2, 3/2]`; masks from `rule`.
pub fn random_positive_cocycle(dim: usize, seed: u64, window: (i64, i64), eps: &[f64], rule: MaskRule) -> Result<MatrixCocycle, Error> {
    if dim == 0 {
        return Err(Error::InvalidInput("dimension must be positive".into()));
    }
    MatrixCocycle::check_ladder(eps)?;
    let (back, forward) = window;
    if back < 0 || forward < 0 {
        return Err(Error::InvalidInput("window margins must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (back + forward + 1) as usize;
    let mut closed = Vec::with_capacity(len);
    let mut hits = Vec::with_capacity(len);
    for slot in 0..len {
        closed.push(DMatrix::from_fn(dim, dim, |_, _| rng.random_range(0.5..1.5)));
        let k = slot as i64 - back;
        let coord = rng.random_range(0..dim);
        let depth = rng.random_range(0.5..=1.0);
        let active = match rule {
            MaskRule::Coordinate => true,
            MaskRule::CoordinateWithGaps { period } => period == 0 || k.rem_euclid(period as i64) != 0,
            MaskRule::Identity => false,
        };
        hits.push(active.then_some((coord, depth)));
    }
    let perturbed = eps
        .iter()
        .map(|&e| {
            closed
                .iter()
                .zip(&hits)
                .map(|(m, h)| {
                    let mut p = m.clone();
                    if let Some((j, c)) = *h {
                        p.column_mut(j).scale_mut(1.0 - c * e);
                    }
                    p
                })
                .collect()
        })
        .collect();
    Ok(MatrixCocycle { dim, back, forward, closed, eps: eps.to_vec(), perturbed })
}

/// The same matrix on every fiber, masked by `rule` as in [`random_positive_cocycle`].
pub fn constant_cocycle(matrix: DMatrix<f64>, window: (i64, i64), eps: &[f64]) -> Result<MatrixCocycle, Error> {
    MatrixCocycle::check_ladder(eps)?;
    if !matrix.is_square() || matrix.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidInput("constant cocycle needs a square, strictly positive matrix".into()));
    }
    let len = (window.0 + window.1 + 1) as usize;
    let closed = vec![matrix.clone(); len];
    let mut p = matrix.clone();
    let perturbed = eps
        .iter()
        .map(|&e| {
            p.copy_from(&matrix);
            p.column_mut(0).scale_mut(1.0 - e);
            vec![p.clone(); len]
        })
        .collect();
    Ok(MatrixCocycle { dim: matrix.nrows(), back: window.0, forward: window.1, closed, eps: eps.to_vec(), perturbed })
}

/// Perturbation `L_ε = L_0 - ε E_1 - ε² E_2` with `ν_{σω,0}(E_1 φ_{ω,0}) = 0`, so that
/// `Δ = O(ε²)` while `η = O(ε)` and `η/Δ` is unbounded.
pub fn adversarial_cocycle(dim: usize, seed: u64, window: (i64, i64), eps: &[f64], depth: usize) -> Result<MatrixCocycle, Error> {
    if dim < 2 {
        return Err(Error::InvalidInput("the adversarial instance needs dimension >= 2".into()));
    }
    let base = random_positive_cocycle(dim, seed, window, eps, MaskRule::Identity)?;
    let (lo, hi) = (-base.back + depth as i64, base.forward - depth as i64 - 1);
    if lo > hi {
        return Err(Error::WindowOverflow { lo, hi, window: (-base.back, base.forward) });
    }
    let tri = triple_window(&base, None, lo, hi, depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut perturbed = base.perturbed.clone();
    for k in lo..=hi {
        let phi = tri.phi(k);
        let nu_next = tri.nu(k + 1);
        let u = DVector::from_fn(dim, |_, _| rng.random_range(0.5..1.5));
        let mut w = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        w -= phi * (w.dot(phi) / phi.dot(phi));
        let e1 = &u * w.transpose();
        debug_assert!((nu_next.dot(&(&e1 * phi))).abs() < 1e-12);
        let e2 = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(0.5..1.5));
        let slot = base.slot(k);
        for (e, &eps_e) in eps.iter().enumerate() {
            perturbed[e][slot] = &base.closed[slot] - &e1 * eps_e - &e2 * (eps_e * eps_e);
        }
    }
    Ok(MatrixCocycle { perturbed, ..base })
}

/// Leading triple on fibers `[a, b]` (with `φ`, `ν` also at `b + 1`).
#[derive(Debug, Clone)]
pub struct TripleWindow {
    pub a: i64,
    pub level: Option<usize>,
    pub phi: Vec<DVector<f64>>,
    pub nu: Vec<DVector<f64>>,
    pub lambda: Vec<f64>,
}

impl TripleWindow {
    fn idx(&self, k: i64) -> usize {
        (k - self.a) as usize
    }

    pub fn phi(&self, k: i64) -> &DVector<f64> {
        &self.phi[self.idx(k)]
    }

    pub fn nu(&self, k: i64) -> &DVector<f64> {
        &self.nu[self.idx(k)]
    }

    pub fn lambda(&self, k: i64) -> f64 {
        self.lambda[self.idx(k)]
    }

    /// `λ_{k-n} ⋯ λ_{k-1}`.
    pub fn lambda_product(&self, k: i64, n: usize) -> f64 {
        (1..=n as i64).map(|i| self.lambda(k - i)).product()
    }
}

fn normalized(v: DVector<f64>) -> DVector<f64> {
    let s = v.iter().map(|x| x.abs()).sum::<f64>();
    v / s
}

fn forward_densities(c: &MatrixCocycle, level: Option<usize>, a: i64, b: i64, depth: usize) -> Vec<DVector<f64>> {
    let mut v = DVector::from_element(c.dim, 1.0 / c.dim as f64);
    for k in (a - depth as i64)..a {
        v = normalized(c.op(level, k) * v);
    }
    let mut out = vec![v.clone()];
    for k in a..=b {
        v = normalized(c.op(level, k) * v);
        out.push(v.clone());
    }
    out
}

fn backward_functionals(c: &MatrixCocycle, level: Option<usize>, a: i64, b: i64, depth: usize) -> Vec<DVector<f64>> {
    let top = b + 1 + depth as i64;
    let mut v = DVector::from_element(c.dim, 1.0);
    for k in ((b + 1)..top).rev() {
        v = normalized(c.op(level, k).tr_mul(&v));
    }
    let mut out = vec![v.clone()];
    for k in (a..=b).rev() {
        v = normalized(c.op(level, k).tr_mul(&v));
        out.push(v.clone());
    }
    out.reverse();
    out
}

fn check_window(c: &MatrixCocycle, a: i64, b: i64, depth: usize) -> Result<(), Error> {
    let lo = a - depth as i64;
    let hi = b + depth as i64;
    if a > b || lo < -c.back || hi > c.forward {
        return Err(Error::WindowOverflow { lo, hi, window: (-c.back, c.forward) });
    }
    Ok(())
}

/// Closed (`level = None`) or perturbed triple. Closed: `ν_0(φ_0) = 1`. Perturbed:
/// `ν_0(φ_ε) = 1` and `ν_ε(φ_ε) = 1`. `λ_k = ν_{k+1,0}(L_k φ_k)` in both cases.
pub fn triple_window(c: &MatrixCocycle, level: Option<usize>, a: i64, b: i64, depth: usize) -> Result<TripleWindow, Error> {
    check_window(c, a, b, depth)?;
    let closed_nu = {
        let phi0 = forward_densities(c, None, a, b, depth);
        let mut nu0 = backward_functionals(c, None, a, b, depth);
        for (n, p) in nu0.iter_mut().zip(&phi0) {
            let s = n.dot(p);
            *n /= s;
        }
        if level.is_none() {
            let lambda = (a..=b).map(|k| nu0[(k + 1 - a) as usize].dot(&(c.op(None, k) * &phi0[(k - a) as usize]))).collect();
            return Ok(TripleWindow { a, level, phi: phi0, nu: nu0, lambda });
        }
        nu0
    };
    let mut phi = forward_densities(c, level, a, b, depth);
    for (p, n0) in phi.iter_mut().zip(&closed_nu) {
        let s = n0.dot(p);
        *p /= s;
    }
    let mut nu = backward_functionals(c, level, a, b, depth);
    for (n, p) in nu.iter_mut().zip(&phi) {
        let s = n.dot(p);
        *n /= s;
    }
    let lambda = (a..=b).map(|k| closed_nu[(k + 1 - a) as usize].dot(&(c.op(level, k) * &phi[(k - a) as usize]))).collect();
    Ok(TripleWindow { a, level, phi, nu, lambda })
}

/// `(λ, φ, ν)` at one fiber, the residuals of the defining identities, and the
/// measured decay of `Q`.
#[derive(Debug, Clone)]
pub struct LeadingTriple {
    pub lambda: f64,
    pub phi: DVector<f64>,
    pub nu: DVector<f64>,
    /// `‖L φ_k - λ φ_{k+1}‖_∞`.
    pub eigen_residual: f64,
    /// `max |ν_{k+1}(L f) - λ ν_k(f)|` over probe vectors.
    pub conformal_residual: f64,
    /// `‖Q φ‖_∞` and `max |ν_{k+1}(Q f)|`.
    pub q_residual: f64,
    /// `‖Q^n f‖ <= D κ^n` fit over probes.
    pub q_const: f64,
    pub q_rate: f64,
}

pub fn leading_triple(c: &MatrixCocycle, level: Option<usize>, k: i64, depth: usize) -> Result<LeadingTriple, Error> {
    let steps = 30usize;
    let tw = triple_window(c, level, k, k + steps as i64, depth)?;
    let own_nu = &tw;
    let lambda = tw.lambda(k);
    let l = c.op(level, k);
    let eigen_residual = (l * tw.phi(k) - tw.phi(k + 1) * lambda).amax();
    let mut rng = ChaCha8Rng::seed_from_u64(k as u64 ^ 0x9e37);
    let probes: Vec<DVector<f64>> = (0..10).map(|_| DVector::from_fn(c.dim, |_, _| rng.random_range(-1.0..1.0))).collect();
    let lam_own = own_nu.nu(k + 1).dot(&(l * own_nu.phi(k)));
    let conformal_residual = probes.iter().map(|f| (own_nu.nu(k + 1).dot(&(l * f)) - lam_own * own_nu.nu(k).dot(f)).abs()).fold(0.0, f64::max);
    let q = |j: i64, f: &DVector<f64>| -> DVector<f64> { c.op(level, j) * f / tw.lambda(j) - tw.phi(j + 1) * own_nu.nu(j).dot(f) };
    let mut q_residual = q(k, tw.phi(k)).amax();
    for f in &probes {
        q_residual = q_residual.max(own_nu.nu(k + 1).dot(&q(k, f)).abs());
    }
    let mut norms = vec![0.0f64; steps];
    for f in &probes {
        let mut g = f.clone();
        for (n, slot) in norms.iter_mut().enumerate() {
            g = q(k + n as i64, &g);
            *slot = slot.max(g.amax());
        }
    }
    let floor = 1e-14;
    let last = norms.iter().rposition(|&x| x > floor).unwrap_or(0).max(1);
    let q_rate = if norms[last] > 0.0 && norms[0] > 0.0 { (norms[last] / norms[0]).powf(1.0 / last as f64).min(1.0) } else { 0.0 };
    let q_const = norms.iter().enumerate().map(|(n, &x)| if q_rate > 0.0 { x / q_rate.powi(n as i32 + 1) } else { x }).fold(0.0, f64::max);
    Ok(LeadingTriple { lambda, phi: tw.phi(k).clone(), nu: own_nu.nu(k).clone(), eigen_residual, conformal_residual, q_residual, q_const, q_rate })
}

/// `sup_{‖f‖_∞ <= 1} |ℓ(f)|`: by sign-vertex enumeration up to dimension 10, by the
/// ℓ¹ norm of the coefficients otherwise.
pub fn dual_norm(functional: &DVector<f64>) -> f64 {
    let d = functional.len();
    if d <= 10 {
        (0u32..1 << d)
            .map(|mask| (0..d).map(|i| if mask >> i & 1 == 1 { functional[i] } else { -functional[i] }).sum::<f64>().abs())
            .fold(0.0, f64::max)
    } else {
        functional.iter().map(|x| x.abs()).sum()
    }
}

/// One ε of the ledger at a fixed fiber.
#[derive(Debug, Clone)]
pub struct LedgerRow {
    pub eps: f64,
    pub delta: f64,
    pub eta: f64,
    pub lambda0: f64,
    pub lambda_eps: f64,
    /// `(λ_0 - λ_ε)/Δ`, NaN when `Δ = 0`.
    pub ratio: f64,
    /// `q^(k)_ε` for `k = 0..=k_max`.
    pub q: Vec<f64>,
    /// `1 - Σ_{k<n} q^(k) / λ_0^{k+1}` for `n = 0..=k_max+1`.
    pub truncations: Vec<f64>,
    /// `ν_{ω,ε}(φ_{ω,0})`.
    pub nu_eps_phi0: f64,
    /// `|λ_0 - λ_ε - ν_{σω,0}((L_0-L_ε)φ_ε)|`.
    pub difference_residual: f64,
    /// Largest residual of the expansion of `ν((L_0-L_ε) L̃^k_ε φ_0)` in `k` through the `q^(k)`.
    pub expansion_residual: f64,
    /// Largest `q^(k)` residual between the forward form and a transposed evaluation.
    pub route_residual: f64,
}

#[derive(Debug, Clone)]
pub struct PerturbationLedger {
    pub fiber: i64,
    pub k_max: usize,
    pub rows: Vec<LedgerRow>,
    /// `q^(k)_0`, extrapolated to ε = 0 along the ladder.
    pub q0: Vec<f64>,
    /// `λ_0^{k+1}` products from `σ^{-(k+1)}ω` to `σ^{-1}ω`.
    pub lambda_products: Vec<f64>,
    pub theta: f64,
    /// `Δ = 0` on the whole ladder.
    pub degenerate: bool,
}

pub fn perturbation_ledger(c: &MatrixCocycle, fiber: i64, k_max: usize, depth: usize) -> Result<PerturbationLedger, Error> {
    let a = fiber - k_max as i64 - 1;
    let b = fiber + 1;
    let closed = triple_window(c, None, a, b, depth)?;
    let lambda_products: Vec<f64> = (0..=k_max).map(|k| closed.lambda_product(fiber, k + 1)).collect();
    let mut rows = Vec::with_capacity(c.eps.len());
    for e in 0..c.eps.len() {
        let pert = triple_window(c, Some(e), a, b, depth)?;
        let d_here = c.difference(e, fiber);
        let nu_next = closed.nu(fiber + 1);
        let dual = d_here.tr_mul(nu_next);
        let delta = dual.dot(closed.phi(fiber));
        let eta = dual_norm(&dual);
        let (lambda0, lambda_eps) = (closed.lambda(fiber), pert.lambda(fiber));
        let ratio = if delta != 0.0 { (lambda0 - lambda_eps) / delta } else { f64::NAN };
        let difference_residual = (lambda0 - lambda_eps - dual.dot(pert.phi(fiber))).abs();
        let mut q = vec![f64::NAN; k_max + 1];
        let mut route_residual: f64 = 0.0;
        for (k, slot) in q.iter_mut().enumerate() {
            let start = fiber - k as i64 - 1;
            let mut g = c.difference(e, start) * closed.phi(start);
            for j in (start + 1)..fiber {
                g = c.op(Some(e), j) * g;
            }
            let num = dual.dot(&g);
            // transposed evaluation of the same numerator
            let mut v = dual.clone();
            for j in ((start + 1)..fiber).rev() {
                v = c.op(Some(e), j).tr_mul(&v);
            }
            let alt = c.difference(e, start).tr_mul(&v).dot(closed.phi(start));
            route_residual = route_residual.max((num - alt).abs() / delta.abs().max(f64::MIN_POSITIVE));
            if delta != 0.0 {
                *slot = num / delta;
            }
        }
        // a_k = ν((L_0-L_ε) L̃^k_ε φ_0) obeys a_{k+1} = (λ_0/λ_ε) a_k - Δ q^(k) / (λ_ε λ^k_ε)
        let mut expansion_residual: f64 = 0.0;
        if delta != 0.0 {
            let mut a_prev = delta;
            for (k, qk) in q.iter().enumerate() {
                let start = fiber - k as i64 - 1;
                let mut g = closed.phi(start).clone();
                for j in start..fiber {
                    g = c.op(Some(e), j) * g / pert.lambda(j);
                }
                let a_next = dual.dot(&g);
                let prod_eps = pert.lambda_product(fiber, k);
                let predicted = closed.lambda(start) / pert.lambda(start) * a_prev - delta * qk / (pert.lambda(start) * prod_eps);
                expansion_residual = expansion_residual.max((a_next - predicted).abs() / delta.abs());
                a_prev = a_next;
            }
        }
        let mut truncations = vec![1.0];
        let mut acc = 1.0;
        for (k, qk) in q.iter().enumerate() {
            acc -= qk / lambda_products[k];
            truncations.push(acc);
        }
        let nu_eps_phi0 = pert.nu(fiber).dot(closed.phi(fiber));
        rows.push(LedgerRow { eps: c.eps[e], delta, eta, lambda0, lambda_eps, ratio, q, truncations, nu_eps_phi0, difference_residual, expansion_residual, route_residual });
    }
    let degenerate = rows.iter().all(|r| r.delta == 0.0);
    let q0: Vec<f64> = (0..=k_max)
        .map(|k| {
            if degenerate {
                return 0.0;
            }
            let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.q[k].is_finite()).map(|r| (r.eps, r.q[k])).collect();
            neville_at_zero(&pts)
        })
        .collect();
    let theta = 1.0 - q0.iter().zip(&lambda_products).map(|(q, l)| q / l).sum::<f64>();
    Ok(PerturbationLedger { fiber, k_max, rows, q0, lambda_products, theta, degenerate })
}

impl PerturbationLedger {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new("perturbation_ledger");
        for r in &self.rows {
            for (name, v) in [("delta", r.delta), ("eta", r.eta), ("ratio", r.ratio), ("nu_eps_phi0", r.nu_eps_phi0)] {
                t.push(Row::info(name, v, 0.0).fiber(self.fiber).level(r.eps));
            }
            t.push(Row::check("difference_residual", r.difference_residual, 1e-12, r.difference_residual <= 1e-12).fiber(self.fiber).level(r.eps));
            t.push(Row::check("expansion_residual", r.expansion_residual, 1e-10, r.expansion_residual <= 1e-10).fiber(self.fiber).level(r.eps));
            for (k, q) in r.q.iter().enumerate() {
                t.push(Row::info("q", *q, 0.0).fiber(self.fiber).level(r.eps).lag(k as i64));
            }
        }
        t.push(Row::info("theta", self.theta, 0.0).fiber(self.fiber));
        t
    }
}

/// Ratio ladder for one fiber, its extrapolated limit, and the verdict.
#[derive(Debug, Clone)]
pub struct FirstOrderCheck {
    pub fiber: i64,
    /// `(ε, (λ_0 - λ_ε)/Δ)`.
    pub ratios: Vec<(f64, f64)>,
    pub limit: f64,
    /// Observed order from the last three ladder points; `None` if already converged.
    pub order: Option<f64>,
    pub theta: f64,
    pub residual: f64,
    /// `η/Δ` along the ladder.
    pub eta_over_delta: Vec<f64>,
    pub p6_ok: bool,
    pub degenerate: bool,
    /// For degenerate fibers: `|λ_0 - λ_ε|` maximized over the ladder.
    pub lambda_gap: f64,
    pub pass: bool,
}

/// Bounded ratio along a ladder: no growth beyond a factor 4 from the coarsest ε.
fn bounded_along(values: &[f64]) -> bool {
    match (values.first(), values.last()) {
        (Some(&a), Some(&b)) if a.is_finite() && b.is_finite() => b <= 4.0 * a.max(1e-300),
        _ => false,
    }
}

pub fn check_first_order(c: &MatrixCocycle, fiber: i64, k_max: usize, depth: usize, tol: f64) -> Result<FirstOrderCheck, Error> {
    let ledger = perturbation_ledger(c, fiber, k_max, depth)?;
    let lambda_gap = ledger.rows.iter().map(|r| (r.lambda0 - r.lambda_eps).abs()).fold(0.0, f64::max);
    let eta_over_delta: Vec<f64> = ledger.rows.iter().map(|r| if r.delta > 0.0 { r.eta / r.delta } else { f64::INFINITY }).collect();
    if ledger.degenerate {
        let eta_zero = ledger.rows.iter().all(|r| r.eta == 0.0);
        let scale = ledger.rows[0].lambda0.abs();
        let pass = eta_zero && lambda_gap <= 1e-14 * scale;
        return Ok(FirstOrderCheck {
            fiber,
            ratios: vec![],
            limit: f64::NAN,
            order: None,
            theta: ledger.theta,
            residual: 0.0,
            eta_over_delta,
            p6_ok: eta_zero,
            degenerate: true,
            lambda_gap,
            pass,
        });
    }
    let ratios: Vec<(f64, f64)> = ledger.rows.iter().map(|r| (r.eps, r.ratio)).collect();
    let limit = neville_at_zero(&ratios);
    let n = ratios.len();
    let order = if n >= 3 {
        let d1 = (ratios[n - 3].1 - ratios[n - 2].1).abs();
        let d2 = (ratios[n - 2].1 - ratios[n - 1].1).abs();
        (d2 > 1e-13).then(|| (d1 / d2).ln() / (ratios[n - 3].0 / ratios[n - 2].0).ln())
    } else {
        None
    };
    let p6_ok = ledger.rows.iter().all(|r| r.delta > 0.0) && bounded_along(&eta_over_delta);
    let residual = (limit - ledger.theta).abs();
    let order_ok = order.is_none_or(|o| o >= 0.8);
    Ok(FirstOrderCheck {
        fiber,
        ratios,
        limit,
        order,
        theta: ledger.theta,
        residual,
        eta_over_delta,
        p6_ok,
        degenerate: false,
        lambda_gap,
        pass: p6_ok && order_ok && residual <= tol,
    })
}

/// Named numerical check of one hypothesis of the first-order expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub name: &'static str,
    pub pass: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct MatrixCheckReport {
    pub hypotheses: Vec<Hypothesis>,
    pub fibers: Vec<FirstOrderCheck>,
}

impl MatrixCheckReport {
    pub fn passed(&self) -> bool {
        self.hypotheses.iter().all(|h| h.pass) && self.fibers.iter().all(|f| f.pass)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new("matrix_check");
        for h in &self.hypotheses {
            t.push(Row::check(h.name, h.value, 0.0, h.pass));
            if !h.pass {
                t.warnings.push(format!("{} fails: {}", h.name, h.detail));
            }
        }
        for f in &self.fibers {
            t.push(Row::check("first_order_residual", f.residual, 0.0, f.pass).fiber(f.fiber));
            t.push(Row::info("theta", f.theta, 0.0).fiber(f.fiber));
        }
        t
    }
}

/// The full battery on `fibers`: eigen identities, Q orthogonality and decay, the
/// ladder hypotheses on η, η/Δ, `ν_ε(φ_0)`, Cauchy behaviour of `q^(k)`, and the
/// first-order limit per fiber.
pub fn matrix_check(c: &MatrixCocycle, fibers: &[i64], k_max: usize, depth: usize, tol: f64) -> Result<MatrixCheckReport, Error> {
    let mut h = Vec::new();
    let mut push = |name: &'static str, pass: bool, value: f64, detail: String| h.push(Hypothesis { name, pass, value, detail });
    let mut c1: f64 = 0.0;
    let mut c2: f64 = 0.0;
    let (mut eig, mut conf, mut qres, mut kappa): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut eta_dec = true;
    let mut p7_dec = true;
    let mut cauchy = true;
    let mut checks = Vec::new();
    for &k in fibers {
        c1 = c1.max(c.norm_bound(k));
        for level in std::iter::once(None).chain((0..c.eps.len()).map(Some)) {
            let t = leading_triple(c, level, k, depth)?;
            c2 = c2.max(t.phi.amax());
            eig = eig.max(t.eigen_residual);
            conf = conf.max(t.conformal_residual);
            qres = qres.max(t.q_residual);
            kappa = kappa.max(t.q_rate);
        }
        let ledger = perturbation_ledger(c, k, k_max, depth)?;
        let rows = &ledger.rows;
        eta_dec &= rows.windows(2).all(|w| w[1].eta <= w[0].eta);
        p7_dec &= rows.windows(2).all(|w| (w[1].nu_eps_phi0 - 1.0).abs() <= (w[0].nu_eps_phi0 - 1.0).abs() + 1e-12);
        if !ledger.degenerate {
            for j in 0..=k_max {
                let d: Vec<f64> = rows.windows(2).map(|w| (w[1].q[j] - w[0].q[j]).abs()).collect();
                cauchy &= d.windows(2).all(|x| x[1] <= x[0] + 1e-14);
            }
        }
        checks.push(check_first_order(c, k, k_max, depth, tol)?);
    }
    push("P1", c1.is_finite(), c1, format!("sup norm bound {c1}"));
    push("P2", eig <= 1e-12, eig, format!("eigen residual {eig:e}"));
    push("P3", qres <= 1e-12 && conf <= 1e-12, qres.max(conf), format!("Q residual {qres:e}, conformal residual {conf:e}"));
    push("P4", c2.is_finite(), c2, format!("sup |φ| {c2}"));
    push("P5", eta_dec, 0.0, "η nonincreasing along the ladder".into());
    let p6 = checks.iter().all(|f| f.p6_ok);
    let worst = checks.iter().filter_map(|f| f.eta_over_delta.last().copied()).fold(0.0, f64::max);
    push("P6", p6, worst, format!("largest η/Δ at the finest ε: {worst}"));
    push("P7", p7_dec, 0.0, "|ν_ε(φ_0) - 1| nonincreasing along the ladder".into());
    push("P8", kappa < 1.0, kappa, format!("Q contraction rate {kappa}"));
    push("P9", cauchy, 0.0, "q^(k) differences shrink along the ladder".into());
    Ok(MatrixCheckReport { hypotheses: h, fibers: checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LADDER: [f64; 3] = [1e-2, 1e-3, 1e-4];

    #[test]
    fn scalar_ratio_is_exactly_one() {
        let c = constant_cocycle(DMatrix::from_element(1, 1, 2.5), (60, 60), &LADDER).unwrap();
        let l = perturbation_ledger(&c, 0, 5, 20).unwrap();
        for r in &l.rows {
            assert!((r.lambda0 - 2.5).abs() < 1e-14);
            assert!((r.lambda_eps - 2.5 * (1.0 - r.eps)).abs() < 1e-14);
            assert!((r.ratio - 1.0).abs() < 1e-12);
            // q^(k) = λ^{k+1} (1-ε)^k ε
            for (k, q) in r.q.iter().enumerate() {
                let expect = 2.5f64.powi(k as i32 + 1) * (1.0 - r.eps).powi(k as i32) * r.eps;
                assert!((q - expect).abs() < 1e-12 * expect.max(1.0));
            }
        }
        // three-point extrapolation of (1-ε)^k ε leaves ε₁ε₂ε₃ Σ_k C(k,2) = 2e-8
        assert!((l.theta - 1.0).abs() < 2.5e-8);
    }

    #[test]
    fn stochastic_constant_cocycle() {
        // column-stochastic: sums are preserved
        let m = DMatrix::from_row_slice(2, 2, &[0.7, 0.4, 0.3, 0.6]);
        let c = constant_cocycle(m, (250, 250), &LADDER).unwrap();
        let t = triple_window(&c, None, 0, 0, 200).unwrap();
        assert!((t.lambda(0) - 1.0).abs() < 1e-14);
        // stationary vector (4/7, 3/7)
        assert!((t.phi(0)[0] - 4.0 / 7.0).abs() < 1e-14);
        assert!((t.nu(0)[0] - t.nu(0)[1]).abs() < 1e-14);
    }

    #[test]
    fn same_seed_same_cocycle() {
        let a = random_positive_cocycle(4, 9, (10, 10), &LADDER, MaskRule::Coordinate).unwrap();
        let b = random_positive_cocycle(4, 9, (10, 10), &LADDER, MaskRule::Coordinate).unwrap();
        assert_eq!(a, b);
        assert!(a.closed.iter().flat_map(|m| m.iter()).all(|&x| (0.5..1.5).contains(&x)));
    }

    #[test]
    fn identity_masks_have_zero_delta() {
        let c = random_positive_cocycle(3, 2, (300, 300), &LADDER, MaskRule::Identity).unwrap();
        let chk = check_first_order(&c, 0, 8, 200, 1e-8).unwrap();
        assert!(chk.degenerate && chk.pass);
        assert_eq!(chk.lambda_gap, 0.0);
    }

    #[test]
    fn triple_residuals_at_depth_200() {
        let c = random_positive_cocycle(5, 4, (300, 300), &LADDER, MaskRule::Coordinate).unwrap();
        for level in [None, Some(0), Some(2)] {
            let t = leading_triple(&c, level, 0, 200).unwrap();
            assert!(t.eigen_residual < 1e-12, "{level:?}: {}", t.eigen_residual);
            assert!(t.conformal_residual < 1e-12);
            assert!(t.q_residual < 1e-12);
            assert!(t.q_rate < 1.0);
        }
    }

    #[test]
    fn dual_norm_routes_agree() {
        let f = DVector::from_vec(vec![0.3, -1.2, 0.5, 2.0]);
        assert!((dual_norm(&f) - 4.0).abs() < 1e-15);
        let g = DVector::from_fn(12, |i, _| (i as f64 - 5.5) * 0.1);
        let by_l1: f64 = g.iter().map(|x| x.abs()).sum();
        assert!((dual_norm(&g) - by_l1).abs() < 1e-15);
    }

    #[test]
    fn random_cocycle_first_order() {
        let c = random_positive_cocycle(5, 11, (300, 300), &LADDER, MaskRule::Coordinate).unwrap();
        let chk = check_first_order(&c, 0, 12, 200, 1e-8).unwrap();
        assert!(chk.pass, "{chk:?}");
        let l = perturbation_ledger(&c, 0, 12, 200).unwrap();
        for r in &l.rows {
            assert!(r.difference_residual < 1e-12);
            assert!(r.expansion_residual < 1e-10, "{}", r.expansion_residual);
            assert!(r.truncations.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn adversarial_instance_is_flagged() {
        let c = adversarial_cocycle(4, 5, (300, 300), &LADDER, 200).unwrap();
        let chk = check_first_order(&c, 0, 8, 200, 1e-8).unwrap();
        assert!(!chk.p6_ok);
        assert!(!chk.pass);
    }
}
