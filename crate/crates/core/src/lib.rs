//! Quenched extreme-value statistics for random open systems of piecewise-affine
//! interval maps.
//!
//! Transfer operators are represented exactly on uniform grids of step functions,
//! so the leading triple `(λ, φ, ν)` of closed and open cocycles, the q̂ series and
//! the extremal index `θ` come from sparse matrix sweeps rather than simulation.
//! A finite-dimensional matrix-cocycle oracle ([`perturb`]) checks the first-order
//! eigenvalue formula at machine precision, and Monte Carlo modules ([`mc`],
//! [`limits`]) check hitting-time and limit laws.
//!
//! Typical flow: build a [`driving::DrivingSystem`], sample a
//! [`driving::FiberPath`], solve thresholds with [`evt::solve_thresholds`], then
//! estimate `θ` with [`evt::theta_estimate`].

pub mod assumptions;
pub mod cli;
pub mod config;
pub mod driving;
pub mod evt;
pub mod extrapolate;
pub mod invariants;
pub mod limits;
pub mod maps;
pub mod mc;
pub mod perturb;
pub mod pipeline;
pub mod presets;
pub mod report;
pub mod svg;
pub mod thermo;
pub mod transfer;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("fibers [{lo}, {hi}] fall outside the window [{}, {}]", window.0, window.1)]
    WindowOverflow { lo: i64, hi: i64, window: (i64, i64) },
    #[error("{what} did not converge (residual {residual:e})")]
    NonConvergence { what: String, residual: f64 },
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("fiber {fiber}: target hole measure {target} exceeds the total mass")]
    Unattainable { fiber: i64, target: f64 },
    #[error("{path}: {field}{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { path: String, field: String, line: Option<usize>, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
