//! Command-line front end: loads a configuration, runs one experiment and
//! writes CSV tables, a JSON summary and SVG plots to the output directory.
//!
//! Exit codes: 0 when every check passes, 1 on a failed check (or any warning
//! under `--strict`), 2 on a configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Exp, Normal};

use crate::assumptions::{verify_assumptions, AssumptionOptions};
use crate::config::ExperimentConfig;
use crate::invariants::{invariant_suite, InvariantOptions};
use crate::perturb::{matrix_check, random_positive_cocycle, MaskRule};
use crate::pipeline::{self, ThetaRun};
use crate::report::{fmt_num, write_csv_atomic, write_json_atomic, write_text_atomic, Row, Table};
use crate::svg::{histogram, qq_points, Plot, Series, Style};
use crate::{evt, limits, presets, thermo, Error};

#[derive(Debug, Parser)]
#[command(name = "quenched", version, about = "Quenched extreme-value statistics for random open interval maps")]
pub struct Cli {
    /// TOML experiment configuration; defaults to the Example 1 preset.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Start from a bundled preset by name (see `quenched presets`).
    #[arg(long, global = true, value_name = "NAME", conflicts_with = "config")]
    pub preset: Option<String>,
    /// Override the configured seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for Monte Carlo sampling.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Treat warnings as failures.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Standing assumptions (E1–E9, A, EX) and the invariant suite.
    Assumptions,
    /// Closed and open multipliers per fiber and escape rates.
    Thermo,
    /// q̂ series and extremal index per fiber.
    Theta,
    /// Non-exceedance at each ladder level against exp(-∫tθ dm).
    Gumbel,
    /// Monte Carlo hitting times against the exponential law.
    Hitting,
    /// Green–Kubo variance and the central limit theorem.
    Clt,
    /// Azuma large-deviation bound and the martingale construction.
    Ldp,
    /// Shrinking-target counts along the 1/k radius schedule.
    BorelCantelli,
    /// First-order eigenvalue battery on random positive matrix cocycles.
    MatrixCheck,
    /// Run a bundled preset (theta, gumbel) by example number.
    Example {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=4))]
        n: u8,
    },
    /// Write the resolved configuration as TOML.
    Config,
    /// List bundled presets.
    Presets,
    /// Dump the branch table of every distinct map on the window.
    Maps,
}

/// Tables and plots produced by one subcommand.
#[derive(Debug, Default, Serialize)]
pub struct Outcome {
    pub tables: Vec<Table>,
    #[serde(skip)]
    pub files: Vec<(String, String)>,
}

impl Outcome {
    fn table(mut self, t: Table) -> Self {
        self.tables.push(t);
        self
    }

    fn file(mut self, name: &str, text: String) -> Self {
        self.files.push((name.into(), text));
        self
    }

    pub fn failures(&self) -> Vec<(&str, &Row)> {
        self.tables.iter().flat_map(|t| t.failures().into_iter().map(move |r| (t.name.as_str(), r))).collect()
    }

    pub fn warnings(&self) -> Vec<&String> {
        self.tables.iter().flat_map(|t| t.warnings.iter()).collect()
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&cli.command, &cli.config) {
        (Command::Example { n }, _) => presets::example(*n).expect("range-checked by clap"),
        (_, Some(p)) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config { path: p.display().to_string(), field: String::new(), line: None, msg: io.to_string() },
            other => other,
        })?,
        (_, None) => match &cli.preset {
            Some(name) => presets::by_name(name).ok_or_else(|| Error::Config {
                path: "--preset".into(),
                field: "name".into(),
                line: None,
                msg: format!("unknown preset {name:?}; known: {}", presets::all().iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ")),
            })?,
            None => presets::example1(),
        },
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.display().to_string();
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.strict |= cli.strict;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return 2;
        }
    };
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    let out = PathBuf::from(&cfg.out);
    let outcome = match execute(&cli.command, &cfg) {
        Ok(o) => o,
        Err(e @ Error::Config { .. }) => {
            eprintln!("config error: {e}");
            return 2;
        }
        Err(e) => {
            eprintln!("error: {e}");
            let _ = write_csv_atomic(&out.join("failures.csv"), &["table", "quantity", "value"], &[vec!["run".into(), "error".into(), e.to_string()]]);
            return 1;
        }
    };
    match emit(&out, &outcome) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error writing {}: {e}", out.display());
            return 1;
        }
    }
    let failures = outcome.failures();
    let warnings = outcome.warnings();
    for t in &outcome.tables {
        let checks = t.rows.iter().filter(|r| r.pass.is_some()).count();
        println!("{}: {} checks, {} failed", t.name, checks, t.failures().len());
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    for (table, r) in &failures {
        eprintln!("FAIL,{table},{},{},{},{}", r.quantity, r.fiber.map(|f| f.to_string()).unwrap_or_default(), fmt_num(r.value), fmt_num(r.tolerance));
    }
    if !failures.is_empty() || (cfg.strict && !warnings.is_empty()) {
        1
    } else {
        0
    }
}

fn emit(out: &Path, o: &Outcome) -> Result<(), Error> {
    for t in &o.tables {
        t.write_csv(&out.join(format!("{}.csv", t.name)))?;
    }
    for (name, text) in &o.files {
        write_text_atomic(&out.join(name), text)?;
    }
    write_json_atomic(&out.join("summary.json"), o)?;
    let rows: Vec<Vec<String>> = o
        .failures()
        .iter()
        .map(|(t, r)| vec![t.to_string(), r.quantity.clone(), r.fiber.map(|f| f.to_string()).unwrap_or_default(), fmt_num(r.value), fmt_num(r.tolerance)])
        .collect();
    let path = out.join("failures.csv");
    if rows.is_empty() {
        if path.exists() {
            std::fs::remove_file(&path)?;
        }
        Ok(())
    } else {
        write_csv_atomic(&path, &["table", "quantity", "fiber", "value", "tolerance"], &rows)
    }
}

pub fn execute(cmd: &Command, cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    match cmd {
        Command::Assumptions => assumptions(cfg),
        Command::Thermo => thermo_cmd(cfg),
        Command::Theta => {
            let run = pipeline::run_theta(cfg)?;
            Ok(theta_outcome(cfg, &run))
        }
        Command::Gumbel => gumbel(cfg),
        Command::Hitting => hitting(cfg),
        Command::Clt => clt(cfg),
        Command::Ldp => ldp(cfg),
        Command::BorelCantelli => borel_cantelli(cfg),
        Command::MatrixCheck => matrix(cfg),
        Command::Example { .. } => {
            let run = pipeline::run_theta(cfg)?;
            let mut o = theta_outcome(cfg, &run);
            let g = gumbel_with(cfg, run.report.t_theta_mean)?;
            o.tables.extend(g.tables);
            o.files.extend(g.files);
            Ok(o)
        }
        Command::Config => Ok(Outcome::default().file("config.toml", cfg.to_toml())),
        Command::Maps => maps(cfg),
        Command::Presets => {
            for c in presets::all() {
                println!("{}", c.name);
            }
            Ok(Outcome::default())
        }
    }
}

fn assumptions(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let env = pipeline::environment(cfg, 0)?;
    let schedule = pipeline::schedule(cfg, &env)?;
    let holes: Vec<_> = schedule.levels.iter().map(|l| l.holes.clone()).collect();
    let a = &cfg.assumptions;
    let opts = AssumptionOptions { weight_exponent: cfg.weight_exponent, max_n_prime: a.max_n_prime, covering_cells: a.covering_cells, covering_cap: a.covering_cap, covering_fibers: 8 };
    let report = verify_assumptions(&env.path, cfg.fibers[0], cfg.fibers[1], &holes, &opts);
    let mut t = report.to_table();
    t.push(Row::info("n_prime", report.n_prime.map_or(f64::NAN, |n| n as f64), 0.0));
    t.warnings.push("constants are verified on the sampled window only".into());
    let inv = invariant_suite(&schedule, cfg.fibers[0], cfg.fibers[1], &InvariantOptions { seed: cfg.seed, ..Default::default() }, &cfg.thermo_config())?;
    Ok(Outcome::default().table(t).table(inv))
}

fn constant_scaling(cfg: &ExperimentConfig) -> Option<f64> {
    match cfg.scaling {
        crate::driving::ParamExpr::Const(t) => Some(t),
        _ => None,
    }
}

fn thermo_cmd(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let (schedule, esc) = pipeline::run_escape(cfg)?;
    let th = cfg.thermo_config();
    let (a, b) = (cfg.fibers[0], cfg.fibers[1]);
    let mut t = Table::new("thermo");
    t.warnings.extend(schedule.warnings.iter().cloned());
    for (li, level) in schedule.levels.iter().enumerate() {
        let s = thermo::multiplier_series(&level.ops, Some(&level.holes), a, b, &th)?;
        for (i, k) in (a..=b).enumerate() {
            if li == 0 {
                t.push(Row::info("lambda_closed", s.log_closed[i].exp(), s.max_depth_residual).fiber(k));
            }
            t.push(Row::info("lambda_open", s.log_open[i].exp(), s.max_equivariance).fiber(k).level(level.big_n));
            t.push(Row::info("hole_measure", s.hole_measure[i], 0.0).fiber(k).level(level.big_n));
        }
    }
    for r in &esc.rows {
        let gap = (r.decay_fit - r.birkhoff).abs() / r.birkhoff;
        t.push(Row::info("escape_decay_fit", r.decay_fit, 0.0).level(r.label));
        t.push(Row::info("escape_birkhoff", r.birkhoff, 0.0).level(r.label));
        t.push(Row::check("escape_form_gap", gap, cfg.thermo.escape_tol, gap <= cfg.thermo.escape_tol).level(r.label));
        t.push(Row::info("escape_ratio", r.ratio, 0.0).level(r.label));
    }
    match (cfg.expected_theta, constant_scaling(cfg)) {
        (Some(theta), Some(_)) => {
            let gap = (esc.extrapolated - theta).abs();
            t.push(Row::check("escape_ratio_limit", esc.extrapolated, cfg.theta.tol, gap <= cfg.theta.tol));
        }
        _ => t.push(Row::info("escape_ratio_limit", esc.extrapolated, cfg.theta.tol)),
    }
    Ok(Outcome::default().table(t))
}

fn theta_outcome(cfg: &ExperimentConfig, run: &ThetaRun) -> Outcome {
    let r = &run.report;
    let tol = cfg.theta.tol;
    let mut t = Table::new("theta");
    t.warnings.extend(run.schedule.warnings.iter().cloned());
    let mut q = Table::new("qhat");
    for f in &r.fibers {
        let spread = f.theta_levels.windows(2).last().map_or(0.0, |w| (w[1] - w[0]).abs());
        t.push(Row::info("theta", f.limit.value, spread).fiber(f.k));
        if f.limit.downgraded {
            t.warnings.push(format!("fiber {}: observed ladder order {:?}, first-order extrapolation not claimed", f.k, f.limit.order));
        }
        if let Some(cf) = f.closed_form {
            t.push(Row::check("theta_vs_closed_form", (f.limit.value - cf).abs(), tol, (f.limit.value - cf).abs() <= tol).fiber(f.k));
        }
        for (li, row) in f.qhat.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                q.push(Row::info("qhat", *v, cfg.theta.route_tol).fiber(f.k).level(r.ladder[li]).lag(k as i64));
            }
        }
    }
    t.push(Row::info("theta_mean", r.theta_mean, tol));
    t.push(Row::info("t_theta_mean", r.t_theta_mean, tol));
    if let Some(expected) = cfg.expected_theta {
        t.push(Row::check("theta_mean_vs_expected", r.theta_mean, tol, (r.theta_mean - expected).abs() <= tol));
    }
    if let Some(cf) = r.closed_form_mean {
        t.push(Row::check("theta_mean_vs_closed_form", r.theta_mean, tol, (r.theta_mean - cf).abs() <= tol));
    }
    for (n, s) in r.ladder.iter().zip(&r.weighted_qsum) {
        t.push(Row::info("weighted_qhat_sum", *s, cfg.theta.tail_tol).level(*n));
    }
    t.push(Row::info("weighted_tail", r.tail, cfg.theta.tail_tol));
    t.push(Row::info("k_max", r.k_max as f64, 0.0));
    t.push(Row::check("route_discrepancy", r.max_discrepancy, cfg.theta.route_tol, r.max_discrepancy <= cfg.theta.route_tol));
    if !r.excluded.is_empty() {
        t.warnings.push(format!("{} fibers outside Ω₊ excluded", r.excluded.len()));
    }
    let trunc: Vec<(f64, f64)> = r.truncations().iter().enumerate().map(|(n, v)| (n as f64, *v)).collect();
    let mut plot = Plot::new("θ truncations at the finest level", "terms", "1 - Σ q̂").with(Series::new("θ_n", trunc, Style::Line));
    if let Some(e) = cfg.expected_theta.or(r.closed_form_mean) {
        plot = plot.with(Series::new("reference", vec![(0.0, e), (r.k_max as f64 + 1.0, e)], Style::Dashed));
    }
    Outcome::default().table(t).table(q).file("theta.svg", plot.to_svg())
}

fn gumbel(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let run = pipeline::run_theta(cfg)?;
    gumbel_with(cfg, run.report.t_theta_mean)
}

fn gumbel_with(cfg: &ExperimentConfig, t_theta: f64) -> Result<Outcome, Error> {
    let k = cfg.gumbel.fiber;
    let (schedule, rows) = pipeline::run_gumbel(cfg, t_theta)?;
    let mut t = Table::new("gumbel");
    t.warnings.extend(schedule.warnings.iter().cloned());
    for g in &rows {
        let n = g.big_n;
        t.push(Row::info("nu_survivor", g.nu_survivor, g.q_bound).fiber(k).level(n));
        t.push(Row::info("mu_survivor", g.mu_survivor, g.q_bound).fiber(k).level(n));
        t.push(Row::info("lambda_ratio", g.lambda_ratio, g.q_bound).fiber(k).level(n));
        t.push(Row::info("target", g.target, cfg.gumbel.tol).fiber(k).level(n));
        let spread = g.form_spread();
        t.push(Row::check("form_spread", spread, g.q_bound, spread <= g.q_bound).fiber(k).level(n));
    }
    if let (Some(g), Some(last)) = (rows.last(), schedule.levels.last()) {
        let rel = (g.nu_survivor - g.target).abs() / g.target;
        t.push(Row::check("nu_survivor_vs_target", rel, cfg.gumbel.tol, rel <= cfg.gumbel.tol).fiber(k).level(g.big_n));
        let h = evt::husler_consistency(last, k, last.big_n.round() as usize, t_theta_scaling(cfg), 1e-9);
        t.push(Row::info("husler_average", h.average, h.deviation.abs()).level(last.big_n));
        t.push(Row::check("husler_xi_mean", h.xi_mean.abs(), 1e-9, !h.flagged).level(last.big_n));
    }
    let nu_pts = rows.iter().map(|g| (g.big_n.log10(), g.nu_survivor)).collect();
    let target_pts = rows.iter().map(|g| (g.big_n.log10(), g.target)).collect();
    let plot = Plot::new("Non-exceedance at level N", "log10 N", "probability")
        .with(Series::new("ν₀ survivor", nu_pts, Style::Line))
        .with(Series::new("exp(-∫tθ dm)", target_pts, Style::Dashed));
    Ok(Outcome::default().table(t).file("gumbel.svg", plot.to_svg()))
}

fn t_theta_scaling(cfg: &ExperimentConfig) -> f64 {
    constant_scaling(cfg).unwrap_or(f64::NAN)
}

fn hitting(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let run = pipeline::run_theta(cfg)?;
    let rate = run.report.t_theta_mean;
    let (_, r) = pipeline::run_hitting(cfg, rate)?;
    let mut t = Table::new("hitting");
    let k = r.fiber;
    t.push(Row::info("rate", rate, cfg.theta.tol));
    t.push(Row::info("samples", r.samples as f64, 0.0));
    t.push(Row::info("censored", r.censored as f64, 0.0).level(r.cap as f64));
    t.push(Row::check("ks_exponential", r.ks, r.ks_tol, r.ks_pass()).fiber(k).level(r.big_n));
    t.push(Row::info("tail_mc", r.tail_mc, r.tail_sigma).fiber(k).level(r.big_n));
    t.push(Row::check("tail_vs_exp_rate", (r.tail_mc - r.tail_target).abs(), 3.0 * r.tail_sigma, r.tail_pass()).fiber(k).level(r.big_n));
    for s in &r.survival {
        t.push(Row::info("survival_mc", s.mc, s.sigma).fiber(k).lag(s.steps as i64));
        t.push(Row::check("survival_vs_operator", (s.mc - s.operator).abs(), 3.0 * s.sigma, s.pass).fiber(k).lag(s.steps as i64));
    }
    if r.censored > 0 {
        t.warnings.push(format!("{} of {} orbits did not hit within {} steps (censored, not truncated)", r.censored, r.samples, r.cap));
    }
    let exp = Exp::new(rate).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let top = r.cap as f64 / r.big_n;
    let grid: Vec<f64> = (0..=200).map(|i| top * i as f64 / 200.0).collect();
    let emp: Vec<(f64, f64)> = grid.iter().map(|&s| (s, r.empirical_survival((s * r.big_n).floor() as usize))).collect();
    let theo: Vec<(f64, f64)> = grid.iter().map(|&s| (s, 1.0 - exp.cdf(s))).collect();
    let plot = Plot::new("Scaled hitting times τ/N", "s", "P(τ > sN)").with(Series::new("Monte Carlo", emp, Style::Line)).with(Series::new("exponential", theo, Style::Dashed));
    Ok(Outcome::default().table(t).file("hitting.svg", plot.to_svg()))
}

fn clt(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let l = &cfg.limits;
    let th = cfg.thermo_config();
    let ops = pipeline::limit_ops(cfg, (2 * l.horizon + l.lags) as i64, cfg.grid.min_cells.min(1024))?;
    let a = cfg.fibers[0];
    let var = limits::variance_estimate(&ops, l.observable, a, l.horizon, l.lags, &th)?;
    let mut t = Table::new("clt");
    t.push(Row::info("sigma2", var.sigma2, var.tail_bound));
    t.push(Row::info("variance_n", var.finite_n, var.tail_bound).level(l.horizon as f64));
    for (j, c) in var.correlations.iter().enumerate().take(8) {
        t.push(Row::info("correlation", *c, 0.0).lag(j as i64));
    }
    let mut files = Vec::new();
    for n in [l.horizon, 2 * l.horizon] {
        let r = limits::clt_check(&ops, l.observable, a, n, l.samples, l.lags, l.ks_tol, cfg.seed, &th)?;
        t.push(Row::check("ks_normal", r.ks, r.ks_tol, r.ks_pass()).level(n as f64));
        t.push(Row::check("direct_vs_green_kubo", (r.direct - r.variance_n).abs(), 3.0 * r.direct_se, r.direct_pass()).level(n as f64));
        if n == l.horizon {
            let cent = limits::centering(&ops, l.observable, a, a + n as i64, &th)?;
            let mut s: Vec<f64> = limits::birkhoff_samples(&ops, l.observable, &cent, a, &[n], l.samples.min(20_000), cfg.seed, &th)?.remove(0).iter().map(|x| x / (n as f64).sqrt()).collect();
            s.sort_by(f64::total_cmp);
            let sd = r.variance_n.sqrt();
            let normal = Normal::new(0.0, sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
            let lim = 4.0 * sd;
            let dens: Vec<(f64, f64)> = (0..=200).map(|i| -lim + 2.0 * lim * i as f64 / 200.0).map(|x| (x, (-(x * x) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))).collect();
            let hist = Plot::new("S_n/√n", "value", "density").with(Series::new("Monte Carlo", histogram(&s, 60, -lim, lim), Style::Bars)).with(Series::new("normal", dens, Style::Line));
            let qq = qq_points(&s, 400, |p| normal.inverse_cdf(p));
            let diag = vec![(-lim, -lim), (lim, lim)];
            let qplot = Plot::new("Normal QQ plot", "normal quantile", "sample quantile").with(Series::new("S_n/√n", qq, Style::Points)).with(Series::new("identity", diag, Style::Dashed));
            files.push(("clt_histogram.svg".to_string(), hist.to_svg()));
            files.push(("clt_qq.svg".to_string(), qplot.to_svg()));
        }
    }
    let mut o = Outcome::default().table(t);
    o.files = files;
    Ok(o)
}

fn ldp(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let l = &cfg.limits;
    let th = cfg.thermo_config();
    let last = l.deviation_horizons.iter().copied().max().unwrap_or(0);
    let ops = pipeline::limit_ops(cfg, (last + l.lags) as i64, cfg.grid.min_cells.min(1024))?;
    let a = cfg.fibers[0];
    let rep = limits::azuma_bound_check(&ops, l.observable, a, &l.deviations, &l.deviation_horizons, l.samples.min(20_000), cfg.seed, &th)?;
    let c = rep.constants;
    let mut t = Table::new("ldp");
    for (name, v) in [("C1", c.c1), ("C2", c.c2), ("U", c.u), ("D", c.d_const), ("kappa", c.kappa)] {
        t.push(Row::info(name, v, 0.0));
    }
    for r in &rep.rows {
        t.push(Row::info("n0", r.n0 as f64, 0.0).level(r.deviation));
        let row = if r.applies() { Row::check("deviation_frequency", r.empirical, r.bound, !r.violated()) } else { Row::info("deviation_frequency", r.empirical, r.bound) };
        t.push(row.level(r.deviation).lag(r.n as i64));
    }
    let m = limits::martingale_check(&ops, l.observable, a, 256.min(last.max(1)), l.lags.max(64), &th)?;
    t.push(Row::check("martingale_conditional_mean", m.residual, 1e-10, m.residual <= 1e-10));
    t.push(Row::check("martingale_g_bound", m.g_sup, c.c1, m.g_sup <= c.c1));
    Ok(Outcome::default().table(t))
}

fn borel_cantelli(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let l = &cfg.limits;
    let th = cfg.thermo_config();
    let ops = pipeline::limit_ops(cfg, l.bc_steps as i64 + 1, 256)?;
    let r = limits::borel_cantelli_count(&ops, cfg.fibers[0], l.bc_center, l.bc_constant, l.bc_power, l.bc_steps, l.bc_orbits, l.bc_tol, cfg.seed, &th)?;
    let mut t = Table::new("borel_cantelli");
    t.push(Row::info("expected_entries", r.expected, 0.0).lag(r.n as i64));
    t.push(Row::info("mean_entries", r.count_mean, r.ratio_se * r.expected).lag(r.n as i64));
    for (m, ratio) in &r.trend {
        t.push(Row::info("ratio_trend", *ratio, 0.0).lag(*m as i64));
    }
    t.push(Row::info("remainder_scale", r.remainder, 0.0));
    t.push(Row::check("ratio", r.ratio, r.tol, r.pass()).lag(r.n as i64));
    let pts: Vec<(f64, f64)> = r.trend.iter().map(|(m, v)| ((*m as f64).log10(), *v)).collect();
    let plot = Plot::new("Shrinking-target ratio", "log10 n", "count / E_n").with(Series::new("pooled", pts, Style::Line)).with(Series::new("1", vec![(2.0, 1.0), ((r.n as f64).log10(), 1.0)], Style::Dashed));
    Ok(Outcome::default().table(t).file("borel_cantelli.svg", plot.to_svg()))
}

fn matrix(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let m = &cfg.matrix_check;
    let mut t = Table::new("matrix_check");
    let depth = 200;
    let k_max = 12;
    for i in 0..m.cocycles {
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let c = random_positive_cocycle(m.dim, seed, (300, 300), &m.ladder, MaskRule::CoordinateWithGaps { period: 4 })?;
        let rep = matrix_check(&c, &[0, 1], k_max, depth, m.tol)?;
        for mut row in rep.to_table().rows {
            if row.fiber.is_none() {
                row.k = Some(i as i64);
            }
            row.quantity = format!("{}#{i}", row.quantity);
            t.push(row);
        }
    }
    Ok(Outcome::default().table(t))
}

fn maps(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let env = pipeline::environment(cfg, 0)?;
    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for k in cfg.fibers[0]..=cfg.fibers[1] {
        let map = env.path.map(k);
        if !seen.insert(map.key()) {
            continue;
        }
        for (i, b) in map.branches.iter().enumerate() {
            rows.push(vec![map.label.clone(), k.to_string(), i.to_string(), fmt_num(b.lo), fmt_num(b.hi), fmt_num(b.slope), fmt_num(b.intercept), b.wraps.to_string()]);
        }
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["map", "first_fiber", "branch", "lo", "hi", "slope", "intercept", "wraps"]).map_err(|e| Error::InvalidInput(e.to_string()))?;
    for r in &rows {
        w.write_record(r).map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?).expect("utf-8 CSV");
    Ok(Outcome::default().file("maps.csv", text))
}
