//! Bundled experiment configurations for the four example families, and small
//! constant-cocycle helpers.

use std::sync::Arc;

use crate::config::{DrivingSpec, ExperimentConfig, GumbelSpec, HittingSpec, LimitsSpec, MatrixCheckSpec, ThermoSpec, ThetaSpec, AssumptionSpec};
use crate::driving::{sample_fiber_path, DrivingSystem, ParamExpr, ParameterAssignment};
use crate::evt::{ClosedForm, ObservableFamily};
use crate::maps::MapFamily;
use crate::transfer::OperatorPath;

fn constant_ops(map: MapFamily, n: usize, r: f64, window: i64) -> OperatorPath {
    let a = ParameterAssignment {
        map,
        observable: ObservableFamily::Quadratic { center: ParamExpr::Const(0.5) },
        scaling: ParamExpr::Const(1.0),
    };
    let d = DrivingSystem::shift(vec![1.0, 0.0], a).expect("valid weights");
    let p = sample_fiber_path(&d, 0, window, window).expect("valid window");
    OperatorPath::new(Arc::new(p), n, r).expect("valid grid")
}

/// Constant Example 1 cocycle on `[-window, window]`.
pub fn constant_example1_ops(s: f64, n: usize, r: f64, window: i64) -> OperatorPath {
    constant_ops(MapFamily::Example1 { s: ParamExpr::Const(s) }, n, r, window)
}

/// Constant β-map cocycle on `[-window, window]`.
pub fn constant_beta_ops(beta: f64, shift: f64, n: usize, r: f64, window: i64) -> OperatorPath {
    constant_ops(MapFamily::Beta { beta: ParamExpr::Const(beta), shift: ParamExpr::Const(shift) }, n, r, window)
}

fn base(name: &str, driving: DrivingSpec, map: MapFamily, observable: ObservableFamily) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        seed: 1,
        threads: 1,
        strict: false,
        out: format!("out/{name}"),
        weight_exponent: 1.0,
        fibers: [0, 199],
        ladder: vec![1e2, 1e3, 1e4],
        bias: 0.0,
        expected_theta: None,
        scaling: ParamExpr::Const(1.0),
        driving,
        map,
        observable,
        closed_form: None,
        grid: Default::default(),
        thermo: ThermoSpec::default(),
        theta: ThetaSpec::default(),
        gumbel: GumbelSpec::default(),
        hitting: HittingSpec::default(),
        limits: LimitsSpec::default(),
        assumptions: AssumptionSpec::default(),
        matrix_check: MatrixCheckSpec::default(),
    }
}

/// Example 1: three-branch maps fixing 1/2, centered holes, `s ≡ 2`.
pub fn example1() -> ExperimentConfig {
    let mut c = base(
        "example1",
        DrivingSpec::Bernoulli { weights: vec![1.0, 0.0] },
        MapFamily::Example1 { s: ParamExpr::Const(2.0) },
        ObservableFamily::Quadratic { center: ParamExpr::Const(0.5) },
    );
    c.closed_form = Some(ClosedForm::FixedPoint { x0: 0.5 });
    c.expected_theta = Some(0.5);
    c
}

/// Example 1 with `s ∈ {2, 3}` chosen by a fair coin.
pub fn example1_random_slope() -> ExperimentConfig {
    let mut c = example1();
    c.name = "example1-random".into();
    c.out = "out/example1-random".into();
    c.driving = DrivingSpec::Bernoulli { weights: vec![0.5, 0.5] };
    c.map = MapFamily::Example1 { s: ParamExpr::PerSymbol { per_symbol: vec![2.0, 3.0] } };
    c.expected_theta = Some(7.0 / 12.0);
    c
}

/// Example 1 with a fixed map and scalings `t ∈ {1, 2}`.
pub fn example1_random_scaling() -> ExperimentConfig {
    let mut c = example1();
    c.name = "example1-scaling".into();
    c.out = "out/example1-scaling".into();
    c.driving = DrivingSpec::Bernoulli { weights: vec![0.5, 0.5] };
    c.scaling = ParamExpr::PerSymbol { per_symbol: vec![1.0, 2.0] };
    c.expected_theta = None;
    c
}

/// Example 2: random β-maps without short branches, holes `[0, r]`, weight `|T'|^-1/2`.
pub fn example2() -> ExperimentConfig {
    let mut c = base(
        "example2",
        DrivingSpec::Bernoulli { weights: vec![0.5, 0.5] },
        MapFamily::Beta { beta: ParamExpr::PerSymbol { per_symbol: vec![2.0, 3.5] }, shift: ParamExpr::Const(0.0) },
        ObservableFamily::LeftEndpoint,
    );
    c.weight_exponent = 0.5;
    c.closed_form = Some(ClosedForm::LeftEndpoint);
    c
}

/// Example 3: the tripling map with holes around the period-2 point 1/8, skewed at random.
pub fn example3() -> ExperimentConfig {
    let mut c = base(
        "example3",
        DrivingSpec::Bernoulli { weights: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0] },
        MapFamily::Beta { beta: ParamExpr::Const(3.0), shift: ParamExpr::Const(0.0) },
        ObservableFamily::Cubic { center: ParamExpr::Const(0.125), skew: ParamExpr::PerSymbol { per_symbol: vec![-0.4, 0.0, 0.4] } },
    );
    c.closed_form = Some(ClosedForm::Periodic { x0: 0.125, period: 2 });
    c.expected_theta = Some(8.0 / 9.0);
    c
}

/// Example 4: integer β-maps with a common irrational shift, balls around rational centers.
pub fn example4() -> ExperimentConfig {
    let mut c = base(
        "example4",
        DrivingSpec::Bernoulli { weights: vec![0.25; 4] },
        MapFamily::Beta { beta: ParamExpr::PerSymbol { per_symbol: vec![3.0, 4.0, 5.0, 6.0] }, shift: ParamExpr::Const(std::f64::consts::SQRT_2 - 1.0) },
        ObservableFamily::LogDistance { center: ParamExpr::PerSymbol { per_symbol: vec![0.2, 0.4, 0.6, 0.8] }, circle: true },
    );
    c.closed_form = Some(ClosedForm::Aperiodic);
    c.expected_theta = Some(1.0);
    c
}

/// Preset by example number.
pub fn example(n: u8) -> Option<ExperimentConfig> {
    match n {
        1 => Some(example1()),
        2 => Some(example2()),
        3 => Some(example3()),
        4 => Some(example4()),
        _ => None,
    }
}

pub fn by_name(name: &str) -> Option<ExperimentConfig> {
    all().into_iter().find(|c| c.name == name)
}

/// Every preset, including the Example 1 variants.
pub fn all() -> Vec<ExperimentConfig> {
    vec![example1(), example1_random_slope(), example1_random_scaling(), example2(), example3(), example4()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for c in all() {
            c.validate().unwrap();
            let back = ExperimentConfig::parse(&c.to_toml(), &c.name).unwrap();
            assert_eq!(back, c);
        }
    }
}
