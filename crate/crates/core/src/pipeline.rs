//! Glue from an [`ExperimentConfig`] to sampled paths, threshold schedules and θ reports.

use std::sync::Arc;

use crate::config::ExperimentConfig;
use crate::driving::{sample_fiber_path, DrivingSystem, FiberPath};
use crate::evt::{self, GridPolicy, GumbelRow, Level, ThetaReport, ThresholdOptions, ThresholdSchedule};
use crate::mc::{self, HittingOptions, HittingReport};
use crate::thermo::{self, EscapeRateReport, ThermoConfig};
use crate::transfer::{choose_grid, OperatorPath};
use crate::Error;

impl ExperimentConfig {
    pub fn thermo_config(&self) -> ThermoConfig {
        ThermoConfig { depth: self.thermo.depth, tol: self.thermo.tol, block: self.thermo.block }
    }

    pub fn threshold_options(&self) -> ThresholdOptions {
        ThresholdOptions {
            grid: GridPolicy { min_cells: self.grid.min_cells, max_cells: self.grid.max_cells, align: self.grid.align, cells_per_hole: self.grid.cells_per_hole },
            weight_exponent: self.weight_exponent,
            bias: self.bias,
            thermo: self.thermo_config(),
        }
    }

    /// Fiber window covering the analysis fibers, q̂ look-back up to `k_cap`, the
    /// thermodynamic depth, and `extra_forward` more fibers.
    pub fn window(&self, extra_forward: i64) -> (i64, i64) {
        let pad = self.thermo.depth as i64 + 10;
        let back = (-self.fibers[0]).max(0) + self.theta.k_cap as i64 + pad;
        let forward = self.fibers[1].max(0) + pad + extra_forward;
        (back, forward)
    }
}

/// A sampled environment together with its driving system.
#[derive(Debug, Clone)]
pub struct Environment {
    pub driving: DrivingSystem,
    pub path: Arc<FiberPath>,
}

pub fn environment(cfg: &ExperimentConfig, extra_forward: i64) -> Result<Environment, Error> {
    let driving = cfg.driving()?;
    let (back, forward) = cfg.window(extra_forward);
    let path = Arc::new(sample_fiber_path(&driving, cfg.seed, back, forward)?);
    Ok(Environment { driving, path })
}

pub fn schedule(cfg: &ExperimentConfig, env: &Environment) -> Result<ThresholdSchedule, Error> {
    evt::solve_thresholds(env.path.clone(), &cfg.ladder, &cfg.threshold_options())
}

#[derive(Debug, Clone)]
pub struct ThetaRun {
    pub env: Environment,
    pub schedule: ThresholdSchedule,
    pub report: ThetaReport,
}

/// Thresholds and θ over the configured fibers and ladder.
pub fn run_theta(cfg: &ExperimentConfig) -> Result<ThetaRun, Error> {
    let env = environment(cfg, 0)?;
    let schedule = schedule(cfg, &env)?;
    let th = &cfg.theta;
    let report = evt::theta_estimate(&schedule, cfg.fibers[0], cfg.fibers[1], th.k_max, th.k_cap, th.tail_tol, cfg.closed_form, &cfg.thermo_config())?;
    Ok(ThetaRun { env, schedule, report })
}

/// Non-exceedance at every ladder level from `cfg.gumbel.fiber`, against `exp(-t_theta)`.
/// The path extends past the fiber by the largest `N` plus the pullback depth.
pub fn run_gumbel(cfg: &ExperimentConfig, t_theta: f64) -> Result<(ThresholdSchedule, Vec<GumbelRow>), Error> {
    let k = cfg.gumbel.fiber;
    let top = cfg.ladder.iter().copied().fold(0.0, f64::max).ceil() as i64;
    let mut local = cfg.clone();
    local.fibers = [k, k];
    let env = environment(&local, top + cfg.thermo.depth as i64)?;
    let schedule = schedule(&local, &env)?;
    let th = cfg.thermo_config();
    let rows = schedule.levels.iter().map(|l| evt::gumbel_check(l, k, t_theta, &th)).collect::<Result<_, _>>()?;
    Ok((schedule, rows))
}

/// Escape rates from `cfg.fibers[0]` over `cfg.thermo.escape_horizon` steps at every ladder level.
pub fn run_escape(cfg: &ExperimentConfig) -> Result<(ThresholdSchedule, EscapeRateReport), Error> {
    let horizon = cfg.thermo.escape_horizon;
    let env = environment(cfg, horizon as i64)?;
    let schedule = schedule(cfg, &env)?;
    let levels: Vec<_> = schedule.levels.iter().map(|l| (&l.ops, &l.holes)).collect();
    let report = thermo::escape_rate(&levels, cfg.fibers[0], horizon, &cfg.thermo_config())?;
    Ok((schedule, report))
}

/// Hitting times at `cfg.hitting.big_n` from fiber `cfg.fibers[0]`, compared
/// with `Exp(rate)`; `rate` is normally `∫ tθ dm` from [`run_theta`].
pub fn run_hitting(cfg: &ExperimentConfig, rate: f64) -> Result<(Level, HittingReport), Error> {
    let h = &cfg.hitting;
    let cap = h.cap_factor * h.big_n.round() as usize;
    let last = h.checkpoints.iter().copied().max().unwrap_or(0).max(cap);
    let env = environment(cfg, last as i64 + cfg.thermo.depth as i64)?;
    let mut schedule = evt::solve_thresholds(env.path.clone(), &[h.big_n], &cfg.threshold_options())?;
    let level = schedule.levels.remove(0);
    let opts = HittingOptions { samples: h.samples, checkpoints: h.checkpoints.clone(), cap, rate, ks_tol: h.ks_tol, seed: cfg.seed };
    let report = mc::hitting_time_mc(&level, cfg.fibers[0], &opts, &cfg.thermo_config())?;
    Ok((level, report))
}

/// Closed (`r = 1`) operators for the limit laws on a grid aligned with the
/// maps and the limit observable, covering `extra_forward` fibers past the window.
pub fn limit_ops(cfg: &ExperimentConfig, extra_forward: i64, min_cells: usize) -> Result<OperatorPath, Error> {
    let env = environment(cfg, extra_forward)?;
    let mut points = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for k in env.path.indices() {
        let map = env.path.map(k);
        if seen.insert(map.key()) {
            points.extend(map.grid_points());
            points.extend(cfg.limits.observable.grid_points(map));
        }
    }
    let grid = choose_grid(&points, min_cells, cfg.grid.max_cells.max(min_cells));
    OperatorPath::new(env.path, grid.n, 1.0)
}
