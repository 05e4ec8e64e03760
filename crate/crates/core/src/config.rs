//! Experiment configuration: TOML schema, validation with field paths and line
//! numbers, and conversion into driving systems.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::driving::{DrivingSystem, ParamExpr, ParameterAssignment};
use crate::evt::{ClosedForm, ObservableFamily};
use crate::maps::MapFamily;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DrivingSpec {
    Rotation {
        alpha: f64,
        #[serde(default)]
        omega0: f64,
    },
    Bernoulli { weights: Vec<f64> },
    Markov { transition: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub min_cells: usize,
    pub max_cells: usize,
    pub align: bool,
    /// Cells per smallest hole when the grid cannot be aligned.
    pub cells_per_hole: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { min_cells: 4096, max_cells: 1 << 18, align: true, cells_per_hole: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermoSpec {
    pub depth: usize,
    pub tol: f64,
    pub block: usize,
    /// Steps used for the escape-rate fit.
    pub escape_horizon: usize,
    /// Relative gap allowed between the survivor decay and the multiplier average.
    pub escape_tol: f64,
}

impl Default for ThermoSpec {
    fn default() -> Self {
        Self { depth: 40, tol: 1e-9, block: 128, escape_horizon: 2000, escape_tol: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThetaSpec {
    pub k_max: usize,
    pub k_cap: usize,
    pub tail_tol: f64,
    /// Allowed gap between the two q̂ routes.
    pub route_tol: f64,
    /// Allowed gap to the closed form or the expected value.
    pub tol: f64,
}

impl Default for ThetaSpec {
    fn default() -> Self {
        Self { k_max: 12, k_cap: 96, tail_tol: 1e-3, route_tol: 1e-8, tol: 1e-2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GumbelSpec {
    /// Starting fiber.
    pub fiber: i64,
    /// Relative tolerance against `exp(-∫ t θ dm)` at the largest `N`.
    pub tol: f64,
}

impl Default for GumbelSpec {
    fn default() -> Self {
        Self { fiber: 0, tol: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HittingSpec {
    /// Ladder level whose holes are hit.
    pub big_n: f64,
    pub samples: usize,
    /// Steps at which Monte Carlo survival is compared with the operator survivor.
    pub checkpoints: Vec<usize>,
    pub ks_tol: f64,
    /// Orbits are followed for `cap_factor * big_n` steps before counting as censored.
    pub cap_factor: usize,
}

impl Default for HittingSpec {
    fn default() -> Self {
        Self { big_n: 1000.0, samples: 100_000, checkpoints: vec![100, 1000, 5000], ks_tol: 0.02, cap_factor: 12 }
    }
}

/// Closed-system observables for the limit theorems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitObservable {
    /// `1_[0,1/2] - 1/2`.
    HalfIndicator,
    /// `cos 2πx`.
    Cosine,
    /// `ψ - ψ∘T` for `ψ = 1_[0,1/2]`.
    Coboundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsSpec {
    pub observable: LimitObservable,
    pub horizon: usize,
    pub samples: usize,
    pub lags: usize,
    pub ks_tol: f64,
    pub deviations: Vec<f64>,
    pub deviation_horizons: Vec<usize>,
    pub bc_center: f64,
    pub bc_constant: f64,
    pub bc_power: f64,
    pub bc_steps: usize,
    pub bc_orbits: usize,
    pub bc_tol: f64,
}

impl Default for LimitsSpec {
    fn default() -> Self {
        Self {
            observable: LimitObservable::HalfIndicator,
            horizon: 2048,
            samples: 100_000,
            lags: 64,
            ks_tol: 0.01,
            deviations: vec![0.2],
            deviation_horizons: vec![256, 1024, 4096],
            bc_center: 0.3,
            bc_constant: 0.5,
            bc_power: 1.0,
            bc_steps: 1_000_000,
            bc_orbits: 400,
            bc_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssumptionSpec {
    pub max_n_prime: usize,
    pub covering_cells: usize,
    pub covering_cap: usize,
}

impl Default for AssumptionSpec {
    fn default() -> Self {
        Self { max_n_prime: 6, covering_cells: 128, covering_cap: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixCheckSpec {
    pub dim: usize,
    pub cocycles: usize,
    pub ladder: Vec<f64>,
    pub tol: f64,
}

impl Default for MatrixCheckSpec {
    fn default() -> Self {
        Self { dim: 5, cocycles: 20, ladder: vec![1e-2, 1e-3, 1e-4], tol: 1e-8 }
    }
}

fn default_threads() -> usize {
    1
}

fn default_out() -> String {
    "out".into()
}

fn default_r() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default = "default_r")]
    pub weight_exponent: f64,
    /// Analysis fibers `[first, last]`.
    pub fibers: [i64; 2],
    /// Increasing `N` values.
    pub ladder: Vec<f64>,
    /// Constant added to every target `N μ(H)`; nonzero only to break the scaling condition on purpose.
    #[serde(default)]
    pub bias: f64,
    /// `∫ θ dm` (or `∫ t θ dm / ∫ t dm`) the run is expected to reproduce.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_theta: Option<f64>,
    pub scaling: ParamExpr,
    pub driving: DrivingSpec,
    pub map: MapFamily,
    pub observable: ObservableFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_form: Option<ClosedForm>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub thermo: ThermoSpec,
    #[serde(default)]
    pub theta: ThetaSpec,
    #[serde(default)]
    pub gumbel: GumbelSpec,
    #[serde(default)]
    pub hitting: HittingSpec,
    #[serde(default)]
    pub limits: LimitsSpec,
    #[serde(default)]
    pub assumptions: AssumptionSpec,
    #[serde(default)]
    pub matrix_check: MatrixCheckSpec,
}

/// Dotted key path of the `key = value` line containing byte `offset`.
fn key_path_at(text: &str, offset: usize) -> Option<String> {
    let mut section = String::new();
    let mut start = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') {
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if offset < start + line.len() {
            let (key, _) = t.split_once('=')?;
            let key = key.trim();
            return Some(if section.is_empty() { key.to_string() } else { format!("{section}.{key}") });
        }
        start += line.len();
    }
    None
}

/// Table name when `offset` points at a `[section]` header.
fn section_at(text: &str, offset: usize) -> Option<String> {
    let t = text.get(offset..)?.lines().next()?.trim();
    t.starts_with('[').then(|| t.trim_matches(|c| c == '[' || c == ']').trim().to_string())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first `key = …` assignment, if present.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        t.starts_with(key) && t[key.len()..].trim_start().starts_with('=')
    })
    .map(|i| i + 1)
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, Error> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let quoted = msg.split('`').nth(1).unwrap_or("").to_string();
            if msg.starts_with("missing field") {
                let section = e.span().filter(|sp| sp.end > sp.start).and_then(|sp| section_at(text, sp.start));
                let field = section.map(|s| format!("{s}.{quoted}")).unwrap_or(quoted);
                return Error::Config { path: origin.into(), field, line: None, msg };
            }
            let field = e.span().and_then(|sp| key_path_at(text, sp.start)).unwrap_or(quoted);
            Error::Config { path: origin.into(), field, line: e.span().map(|s| line_of(text, s.start)), msg }
        })?;
        cfg.validate().map_err(|e| match e {
            Error::Config { path, field, msg, .. } => {
                let leaf = field.rsplit('.').next().unwrap_or(&field).to_string();
                Error::Config { line: line_of_key(text, &leaf), path: if path.is_empty() { origin.into() } else { path }, field, msg }
            }
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), Error> {
        let fail = |field: &str, msg: String| Err(Error::Config { path: String::new(), field: field.into(), line: None, msg });
        if self.threads == 0 {
            return fail("threads", "must be at least 1".into());
        }
        if !(self.weight_exponent >= 0.0) {
            return fail("weight_exponent", format!("must be nonnegative, got {}", self.weight_exponent));
        }
        if self.fibers[0] > self.fibers[1] {
            return fail("fibers", "first fiber exceeds last".into());
        }
        if self.ladder.is_empty() || self.ladder.iter().any(|&n| !(n >= 1.0)) || self.ladder.windows(2).any(|w| !(w[1] > w[0])) {
            return fail("ladder", "must be a nonempty, strictly increasing list of N >= 1".into());
        }
        if self.grid.min_cells < 2 || self.grid.max_cells < self.grid.min_cells {
            return fail("grid.min_cells", format!("need 2 <= min_cells <= max_cells, got {} and {}", self.grid.min_cells, self.grid.max_cells));
        }
        if self.thermo.depth == 0 || self.thermo.block == 0 || !(self.thermo.tol > 0.0) {
            return fail("thermo.depth", "depth and block must be positive and tol > 0".into());
        }
        if self.theta.k_cap < self.theta.k_max {
            return fail("theta.k_cap", "must be at least k_max".into());
        }
        if self.hitting.samples == 0 {
            return fail("hitting.samples", "must be positive".into());
        }
        if !(self.hitting.big_n >= 1.0) || self.hitting.cap_factor == 0 {
            return fail("hitting.big_n", "need big_n >= 1 and a positive cap_factor".into());
        }
        if self.limits.samples < 2 || self.limits.horizon == 0 {
            return fail("limits.samples", "need at least 2 samples and a positive horizon".into());
        }
        if self.matrix_check.dim == 0 || self.matrix_check.ladder.is_empty() {
            return fail("matrix_check.dim", "need a positive dimension and a nonempty ladder".into());
        }
        self.driving().map_err(|e| Error::Config { path: String::new(), field: "driving".into(), line: None, msg: e.to_string() })?;
        Ok(())
    }

    pub fn assignment(&self) -> ParameterAssignment {
        ParameterAssignment { map: self.map.clone(), observable: self.observable.clone(), scaling: self.scaling.clone() }
    }

    pub fn driving(&self) -> Result<DrivingSystem, Error> {
        let a = self.assignment();
        match &self.driving {
            DrivingSpec::Rotation { alpha, omega0 } => DrivingSystem::rotation(*alpha, *omega0, a),
            DrivingSpec::Bernoulli { weights } => DrivingSystem::shift(weights.clone(), a),
            DrivingSpec::Markov { transition } => DrivingSystem::markov(transition.clone(), a),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
name = "demo"
fibers = [0, 9]
ladder = [100.0, 1000.0]
scaling = { per_symbol = [1.0, 2.0] }

[driving]
kind = "bernoulli"
weights = [0.5, 0.5]

[map]
family = "example1"
s = 2.0

[observable]
family = "quadratic"
center = 0.5

[closed_form]
kind = "fixed_point"
x0 = 0.5
"#;

    #[test]
    fn round_trip_is_stable() {
        let a = ExperimentConfig::parse(TEXT, "demo.toml").unwrap();
        let s1 = a.to_toml();
        let b = ExperimentConfig::parse(&s1, "rt").unwrap();
        assert_eq!(a, b);
        assert_eq!(s1, b.to_toml());
    }

    #[test]
    fn negative_grid_names_field_and_line() {
        let bad = TEXT.replace("[map]", "[grid]\nmin_cells = -4\n\n[map]");
        match ExperimentConfig::parse(&bad, "bad.toml") {
            Err(Error::Config { line: Some(l), msg, .. }) => {
                assert_eq!(l, bad.lines().position(|x| x.starts_with("min_cells")).unwrap() + 1);
                assert!(!msg.is_empty());
            }
            other => panic!("{other:?}"),
        }
        let bad = TEXT.replace("[map]", "[grid]\nmin_cells = 1\n\n[map]");
        match ExperimentConfig::parse(&bad, "bad.toml") {
            Err(Error::Config { field, line: Some(_), .. }) => assert_eq!(field, "grid.min_cells"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let bad = TEXT.replace("name = \"demo\"", "name = \"demo\"\ncolour = 3");
        assert!(matches!(ExperimentConfig::parse(&bad, "x"), Err(Error::Config { .. })));
    }
}
