//! Base dynamics: finite windows of the driving orbit with per-fiber parameters.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evt::{Observable, ObservableFamily};
use crate::maps::{MapFamily, PiecewiseAffineMap};
use crate::Error;

/// A scalar parameter as a function of the fiber state.
///
/// For an angle `w` the affine form is `a + b*w` and the table form picks entry
/// `floor(w * len)`. For a symbol `i` the affine form is `a + b*i` and the table
/// form picks entry `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamExpr {
    Const(f64),
    Affine { affine: [f64; 2] },
    PerSymbol { per_symbol: Vec<f64> },
}

impl ParamExpr {
    pub fn eval(&self, state: FiberState) -> f64 {
        match (self, state) {
            (ParamExpr::Const(c), _) => *c,
            (ParamExpr::Affine { affine }, FiberState::Angle(w)) => affine[0] + affine[1] * w,
            (ParamExpr::Affine { affine }, FiberState::Symbol(i)) => affine[0] + affine[1] * i as f64,
            (ParamExpr::PerSymbol { per_symbol }, FiberState::Symbol(i)) => per_symbol[i % per_symbol.len()],
            (ParamExpr::PerSymbol { per_symbol }, FiberState::Angle(w)) => {
                let len = per_symbol.len();
                per_symbol[((w * len as f64).floor() as usize).min(len - 1)]
            }
        }
    }

    /// Every value the expression can take on a finite alphabet, or the range
    /// endpoints for an angle.
    pub fn support(&self, alphabet: Option<usize>) -> Vec<f64> {
        match self {
            ParamExpr::Const(c) => vec![*c],
            ParamExpr::Affine { affine } => match alphabet {
                Some(l) => (0..l).map(|i| affine[0] + affine[1] * i as f64).collect(),
                None => vec![affine[0], affine[0] + affine[1]],
            },
            ParamExpr::PerSymbol { per_symbol } => per_symbol.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FiberState {
    Angle(f64),
    Symbol(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DrivingKind {
    Rotation { alpha: f64, omega0: f64 },
    Shift { weights: Vec<f64> },
    Markov { transition: Vec<Vec<f64>> },
}

/// How fiber states become maps, observables and scalings.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterAssignment {
    pub map: MapFamily,
    pub observable: ObservableFamily,
    pub scaling: ParamExpr,
}

/// Concrete per-fiber payload.
#[derive(Debug, Clone)]
pub struct FiberParams {
    pub map: Arc<PiecewiseAffineMap>,
    pub observable: Observable,
    pub scaling: f64,
}

#[derive(Debug, Clone)]
pub struct DrivingSystem {
    pub kind: DrivingKind,
    pub assignment: ParameterAssignment,
    /// Set when the rotation angle is (numerically) rational.
    pub warnings: Vec<String>,
}

const CFTP_MAX: i64 = 1 << 20;

fn position_uniform(seed: u64, k: i64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng.random::<f64>()
}

fn inverse_cdf(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // u within round-off of 1: last symbol with positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn check_probability(weights: &[f64], what: &str) -> Result<(), Error> {
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!("{what} must be nonnegative and sum to 1 (sum = {total})")));
    }
    Ok(())
}

impl DrivingSystem {
    pub fn rotation(alpha: f64, omega0: f64, assignment: ParameterAssignment) -> Result<Self, Error> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidInput(format!("rotation angle {alpha} outside (0,1)")));
        }
        let mut warnings = Vec::new();
        if let Some((p, q)) = crate::maps::rational_approx(alpha, 1000) {
            warnings.push(format!("rotation angle {alpha} = {p}/{q} is rational: not ergodic"));
        }
        Ok(Self { kind: DrivingKind::Rotation { alpha, omega0: omega0.rem_euclid(1.0) }, assignment, warnings })
    }

    pub fn shift(weights: Vec<f64>, assignment: ParameterAssignment) -> Result<Self, Error> {
        if weights.len() < 2 {
            return Err(Error::InvalidInput("shift alphabet needs at least 2 symbols".into()));
        }
        check_probability(&weights, "symbol weights")?;
        Ok(Self { kind: DrivingKind::Shift { weights }, assignment, warnings: Vec::new() })
    }

    pub fn markov(transition: Vec<Vec<f64>>, assignment: ParameterAssignment) -> Result<Self, Error> {
        let l = transition.len();
        if l < 2 || transition.iter().any(|row| row.len() != l) {
            return Err(Error::InvalidInput("transition matrix must be square with at least 2 states".into()));
        }
        for (i, row) in transition.iter().enumerate() {
            check_probability(row, &format!("transition row {i}"))?;
        }
        Ok(Self { kind: DrivingKind::Markov { transition }, assignment, warnings: Vec::new() })
    }

    pub fn alphabet(&self) -> Option<usize> {
        match &self.kind {
            DrivingKind::Rotation { .. } => None,
            DrivingKind::Shift { weights } => Some(weights.len()),
            DrivingKind::Markov { transition } => Some(transition.len()),
        }
    }

    /// State at absolute lattice position `k`; a pure function of `(seed, k)`.
    pub fn state_at(&self, seed: u64, k: i64) -> Result<FiberState, Error> {
        match &self.kind {
            DrivingKind::Rotation { alpha, omega0 } => Ok(FiberState::Angle((omega0 + k as f64 * alpha).rem_euclid(1.0))),
            DrivingKind::Shift { weights } => Ok(FiberState::Symbol(inverse_cdf(weights, position_uniform(seed, k)))),
            DrivingKind::Markov { transition } => {
                let mut states = self.markov_run(seed, k, k, transition)?;
                Ok(FiberState::Symbol(states.pop().unwrap()))
            }
        }
    }

    /// Coupling from the past: the state at `a` is the common image of all
    /// starting states, so it does not depend on the window.
    fn markov_run(&self, seed: u64, a: i64, b: i64, transition: &[Vec<f64>]) -> Result<Vec<usize>, Error> {
        let l = transition.len();
        let mut back = 16;
        let start = loop {
            let mut states: Vec<usize> = (0..l).collect();
            for j in (a - back + 1)..=a {
                let u = position_uniform(seed, j);
                for s in states.iter_mut() {
                    *s = inverse_cdf(&transition[*s], u);
                }
            }
            if states.iter().all(|&s| s == states[0]) {
                break states[0];
            }
            back *= 2;
            if back > CFTP_MAX {
                return Err(Error::InvalidInput("Markov coupling did not coalesce; chain may be periodic".into()));
            }
        };
        let mut out = Vec::with_capacity((b - a + 1) as usize);
        out.push(start);
        let mut s = start;
        for j in (a + 1)..=b {
            s = inverse_cdf(&transition[s], position_uniform(seed, j));
            out.push(s);
        }
        Ok(out)
    }

    fn states(&self, seed: u64, a: i64, b: i64) -> Result<Vec<FiberState>, Error> {
        match &self.kind {
            DrivingKind::Markov { transition } => {
                Ok(self.markov_run(seed, a, b, transition)?.into_iter().map(FiberState::Symbol).collect())
            }
            _ => (a..=b).map(|k| self.state_at(seed, k)).collect(),
        }
    }
}

/// Realized window `sigma^k omega` for `k` in `[-back, forward]`, relative to
/// the lattice position `origin`.
#[derive(Debug, Clone)]
pub struct FiberPath {
    pub seed: u64,
    pub origin: i64,
    pub back: i64,
    pub forward: i64,
    pub states: Vec<FiberState>,
    pub params: Vec<Arc<FiberParams>>,
}

impl FiberPath {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn contains(&self, k: i64) -> bool {
        k >= -self.back && k <= self.forward
    }

    fn slot(&self, k: i64) -> usize {
        assert!(self.contains(k), "fiber index {k} outside window [{}, {}]", -self.back, self.forward);
        (k + self.back) as usize
    }

    pub fn state(&self, k: i64) -> FiberState {
        self.states[self.slot(k)]
    }

    pub fn params(&self, k: i64) -> &FiberParams {
        &self.params[self.slot(k)]
    }

    pub fn map(&self, k: i64) -> &PiecewiseAffineMap {
        &self.params(k).map
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<i64> {
        -self.back..=self.forward
    }

    /// The same window realized at `sigma^by omega`.
    pub fn shifted(&self, driving: &DrivingSystem, by: i64) -> Result<FiberPath, Error> {
        sample_window(driving, self.seed, self.origin + by, self.back, self.forward)
    }
}

/// Window `[-back, forward]` around lattice position 0.
pub fn sample_fiber_path(driving: &DrivingSystem, seed: u64, back: i64, forward: i64) -> Result<FiberPath, Error> {
    sample_window(driving, seed, 0, back, forward)
}

fn sample_window(driving: &DrivingSystem, seed: u64, origin: i64, back: i64, forward: i64) -> Result<FiberPath, Error> {
    if back < 0 || forward < 0 {
        return Err(Error::InvalidInput("window sizes must be nonnegative".into()));
    }
    let states = driving.states(seed, origin - back, origin + forward)?;
    let mut maps: HashMap<Vec<u64>, Arc<PiecewiseAffineMap>> = HashMap::new();
    let mut params = Vec::with_capacity(states.len());
    let mut by_symbol: HashMap<usize, Arc<FiberParams>> = HashMap::new();
    for &st in &states {
        if let FiberState::Symbol(i) = st {
            if let Some(p) = by_symbol.get(&i) {
                params.push(p.clone());
                continue;
            }
        }
        let map = driving.assignment.map.realize(st)?;
        let map = maps.entry(map.key()).or_insert_with(|| Arc::new(map)).clone();
        let observable = driving.assignment.observable.realize(st);
        let scaling = driving.assignment.scaling.eval(st);
        if !(scaling > 0.0) {
            return Err(Error::InvalidInput(format!("scaling t must be positive, got {scaling}")));
        }
        let p = Arc::new(FiberParams { map, observable, scaling });
        if let FiberState::Symbol(i) = st {
            by_symbol.insert(i, p.clone());
        }
        params.push(p);
    }
    Ok(FiberPath { seed, origin, back, forward, states, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example1_assignment(s: ParamExpr) -> ParameterAssignment {
        ParameterAssignment {
            map: MapFamily::Example1 { s },
            observable: ObservableFamily::Quadratic { center: ParamExpr::Const(0.5) },
            scaling: ParamExpr::Const(1.0),
        }
    }

    #[test]
    fn rotation_orbit() {
        let d = DrivingSystem::rotation(0.6180339887, 0.0, example1_assignment(ParamExpr::Const(2.0))).unwrap();
        let FiberState::Angle(w1) = d.state_at(0, 1).unwrap() else { panic!() };
        let FiberState::Angle(w2) = d.state_at(0, 2).unwrap() else { panic!() };
        assert!((w1 - 0.6180339887).abs() < 1e-12);
        assert!((w2 - 0.2360679774).abs() < 1e-10);
    }

    #[test]
    fn rational_rotation_flagged() {
        let d = DrivingSystem::rotation(0.5, 0.0, example1_assignment(ParamExpr::Const(2.0))).unwrap();
        assert!(d.warnings.iter().any(|w| w.contains("not ergodic")));
        assert!(DrivingSystem::rotation(1.5, 0.0, example1_assignment(ParamExpr::Const(2.0))).is_err());
    }

    #[test]
    fn affine_parameter() {
        let e = ParamExpr::Affine { affine: [2.0, 1.0] };
        assert!((e.eval(FiberState::Angle(0.25)) - 2.25).abs() < 1e-15);
    }

    #[test]
    fn degenerate_shift_is_constant() {
        let d = DrivingSystem::shift(vec![1.0, 0.0], example1_assignment(ParamExpr::Const(2.0))).unwrap();
        for k in -20..20 {
            assert_eq!(d.state_at(3, k).unwrap(), FiberState::Symbol(0));
        }
        assert!(DrivingSystem::shift(vec![0.5, 0.6], example1_assignment(ParamExpr::Const(2.0))).is_err());
    }

    #[test]
    fn windows_agree_on_overlap() {
        let d = DrivingSystem::shift(vec![0.25; 4], example1_assignment(ParamExpr::PerSymbol { per_symbol: vec![2.0, 2.5, 3.0, 3.5] })).unwrap();
        let small = sample_fiber_path(&d, 11, 3, 3).unwrap();
        let big = sample_fiber_path(&d, 11, 10, 20).unwrap();
        for k in small.indices() {
            assert_eq!(small.state(k), big.state(k));
        }
        let again = sample_fiber_path(&d, 11, 3, 3).unwrap();
        assert_eq!(small.states, again.states);
    }

    #[test]
    fn shift_equivariance() {
        let d = DrivingSystem::shift(vec![0.5, 0.5], example1_assignment(ParamExpr::PerSymbol { per_symbol: vec![2.0, 3.0] })).unwrap();
        let p = sample_fiber_path(&d, 5, 4, 6).unwrap();
        let q = p.shifted(&d, 1).unwrap();
        for k in -4..6 {
            assert_eq!(p.state(k + 1), q.state(k));
            assert_eq!(p.map(k + 1).key(), q.map(k).key());
        }
    }

    #[test]
    fn markov_windows_agree() {
        let t = vec![vec![0.9, 0.1], vec![0.3, 0.7]];
        let d = DrivingSystem::markov(t, example1_assignment(ParamExpr::PerSymbol { per_symbol: vec![2.0, 3.0] })).unwrap();
        let a = sample_fiber_path(&d, 9, 5, 40).unwrap();
        let b = sample_fiber_path(&d, 9, 30, 10).unwrap();
        for k in -5..=10 {
            assert_eq!(a.state(k), b.state(k));
        }
        assert_eq!(a.state(7), d.state_at(9, 7).unwrap());
    }

    #[test]
    fn symbol_frequencies_match_weights() {
        let w = vec![0.1, 0.2, 0.3, 0.4];
        let d = DrivingSystem::shift(w.clone(), example1_assignment(ParamExpr::Const(2.0))).unwrap();
        let n = 1_000_000;
        let mut counts = [0usize; 4];
        let DrivingKind::Shift { weights } = &d.kind else { unreachable!() };
        for k in 0..n {
            counts[inverse_cdf(weights, position_uniform(42, k))] += 1;
        }
        for i in 0..4 {
            let f = counts[i] as f64 / n as f64;
            let sd = (w[i] * (1.0 - w[i]) / n as f64).sqrt();
            assert!((f - w[i]).abs() < 3.0 * sd, "symbol {i}: {f} vs {}", w[i]);
        }
    }
}
