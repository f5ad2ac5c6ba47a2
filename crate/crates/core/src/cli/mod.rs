//! Batch front end: run configurations, verification suites and reports.
//!
//! Every run writes a CSV table and a JSON report into the output directory,
//! plus SVG charts when plots are enabled. Outputs are assembled in memory and
//! written at the end, so a failed run leaves nothing behind.

pub mod config;
pub mod plot;

use crate::asymptotics::{
    curvature_at, decay_scan_with, distance_grid, fit_expansion, orbifold_profile, ExpansionFit,
    PARITY_FACTOR,
};
use crate::bergman::{build_grid, gram, grid_for, KernelData};
use crate::error::BergmanError;
use crate::geometry::{ChartPoint, KaehlerModel};
use crate::model::{
    b0u, b1, j2u_closed, j2u_closed_deviation, j2u_volterra, log_slope, model_heat_kernel,
    plane_integral, CurvatureScalars, ModelSpectrum,
};
use crate::sections::basis_for;
use num_complex::Complex64;
use plot::{line_chart, Series};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub use config::{RunConfig, Subcommand, Tolerances};

/// Version of the CSV and JSON layouts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Compute(#[from] BergmanError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for anything the user can fix in the config or invocation, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Compute(e) => match e {
                BergmanError::IndefiniteGram { .. }
                | BergmanError::GridTooCoarse(_)
                | BergmanError::QuadratureDiverged(_)
                | BergmanError::BelowFloor { .. } => 1,
                _ => 2,
            },
        }
    }
}

/// How a check compares its measurement with the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `|measured - target| <= tolerance * max(|target|, 1)`
    Close,
    /// `measured <= target`
    AtMost,
    /// `measured >= target`
    AtLeast,
    /// The measurement is a boolean encoded as 0 or 1.
    Holds,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub relation: Relation,
    pub target: f64,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn close(name: impl Into<String>, target: f64, measured: f64, tolerance: f64) -> Self {
        let pass = (measured - target).abs() <= tolerance * target.abs().max(1.0);
        Self {
            name: name.into(),
            relation: Relation::Close,
            target,
            measured,
            tolerance,
            pass,
        }
    }

    pub fn at_most(name: impl Into<String>, bound: f64, measured: f64) -> Self {
        Self {
            name: name.into(),
            relation: Relation::AtMost,
            target: bound,
            measured,
            tolerance: 0.0,
            pass: measured <= bound,
        }
    }

    pub fn at_least(name: impl Into<String>, bound: f64, measured: f64) -> Self {
        Self {
            name: name.into(),
            relation: Relation::AtLeast,
            target: bound,
            measured,
            tolerance: 0.0,
            pass: measured >= bound,
        }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            relation: Relation::Holds,
            target: 1.0,
            measured: if ok { 1.0 } else { 0.0 },
            tolerance: 0.0,
            pass: ok,
        }
    }
}

/// The result of one run, before anything is written.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub checks: Vec<Check>,
    /// File name and contents, in write order.
    pub files: Vec<(String, String)>,
}

impl RunOutput {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Reads the config file and runs the suite.
pub fn run_file(sub: Subcommand, config: &Path, plots: bool) -> Result<RunOutput, CliError> {
    let text = fs::read_to_string(config).map_err(|source| CliError::Io {
        path: config.to_path_buf(),
        source,
    })?;
    let mut cfg = RunConfig::parse(sub, &text)?;
    cfg.plots |= plots;
    run(&cfg)
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    match cfg.subcommand {
        Subcommand::Diag => run_diag(cfg),
        Subcommand::Offdiag => run_offdiag(cfg),
        Subcommand::Orbifold => run_orbifold(cfg),
        Subcommand::ModelCheck => run_model_check(cfg),
        Subcommand::Heat => run_heat(cfg),
    }
}

/// Writes every file of the run into `dir`; on failure removes what was written.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for (name, body) in &out.files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, body).map_err(io(&path)) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            return Err(e);
        }
        written.push(path);
    }
    Ok(written)
}

/// Quotes a CSV field when it contains a separator or a quote.
fn field(s: impl std::fmt::Display) -> String {
    let s = s.to_string();
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

fn report(cfg: &RunConfig, checks: &[Check], details: Value) -> String {
    let body = json!({
        "schema_version": SCHEMA_VERSION,
        "subcommand": cfg.subcommand.name(),
        "config": cfg,
        "config_hash": cfg.hash(),
        "tolerances": cfg.tolerances,
        "pass": checks.iter().all(|c| c.pass),
        "checks": checks,
        "details": details,
    });
    let mut s = serde_json::to_string_pretty(&body).expect("report serializes");
    s.push('\n');
    s
}

fn finish(cfg: &RunConfig, checks: Vec<Check>, csv: String, details: Value, svgs: Vec<(String, String)>) -> RunOutput {
    let mut files = vec![(cfg.csv.clone(), csv), (cfg.json.clone(), report(cfg, &checks, details))];
    if cfg.plots {
        let stem = cfg.subcommand.name();
        files.extend(svgs.into_iter().map(|(suffix, body)| (format!("{stem}_{suffix}.svg"), body)));
    }
    RunOutput { checks, files }
}

/// Kernel data at the configured grid order.
fn kernel(cfg: &RunConfig, model: &KaehlerModel, p: u32) -> Result<KernelData, BergmanError> {
    let basis = basis_for(model, p)?;
    let grid = match cfg.order {
        Some(o) => build_grid(model, o)?,
        None => grid_for(&basis)?,
    };
    let fact = gram(&basis, &grid)?;
    Ok(KernelData { basis, grid, fact })
}

fn run_diag(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let model = cfg.kaehler_model()?;
    let points = cfg.chart_points()?;
    let tol = cfg.tolerances.b1;
    let table: Vec<Vec<f64>> = cfg
        .p
        .par_iter()
        .map(|&p| -> Result<Vec<f64>, BergmanError> {
            let kd = kernel(cfg, &model, p)?;
            points.iter().map(|&x| kd.diagonal(x)).collect()
        })
        .collect::<Result<_, _>>()?;

    let mut csv = String::from("schema_version,model,p,point,b_p\n");
    for (p, row) in cfg.p.iter().zip(&table) {
        for (x, v) in points.iter().zip(row) {
            let _ = writeln!(csv, "{SCHEMA_VERSION},{},{p},{},{v}", field(model), field(x));
        }
    }

    let mut checks = Vec::new();
    let mut fits: Vec<ExpansionFit> = Vec::new();
    for (i, &x) in points.iter().enumerate() {
        let samples: Vec<(u32, f64)> = cfg.p.iter().zip(&table).map(|(&p, r)| (p, r[i])).collect();
        let mut fit = fit_expansion(&samples, 1, cfg.fit_degree)?;
        fit.point = Some(x.to_string());
        let target = b1(&curvature_at(&model, x)?);
        checks.push(Check::close(format!("b0 at {x}"), 1.0, fit.coefficient(0), tol));
        checks.push(Check::close(format!("b1 at {x}"), target, fit.coefficient(1), tol));
        if let Some(probe) = &fit.parity {
            checks.push(Check::at_most(
                format!("half-power coefficient at {x}"),
                PARITY_FACTOR * probe.noise_floor,
                probe.coefficient.abs(),
            ));
        }
        fits.push(fit);
    }

    let series: Vec<Series> = points
        .iter()
        .enumerate()
        .map(|(i, x)| Series {
            label: x.to_string(),
            points: cfg
                .p
                .iter()
                .zip(&table)
                .map(|(&p, r)| (1.0 / p as f64, r[i] / p as f64))
                .collect(),
        })
        .collect();
    let svg = line_chart(&format!("B_p/p on {model}"), "1/p", "B_p / p", &series);
    Ok(finish(cfg, checks, csv, json!({ "fits": fits }), vec![("bp".into(), svg)]))
}

fn run_offdiag(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let model = cfg.kaehler_model()?;
    let points = cfg.chart_points()?;
    let ds = distance_grid(cfg.distance_max, cfg.distance_count);
    let scans = cfg
        .p
        .par_iter()
        .map(|&p| -> Result<Vec<_>, BergmanError> {
            let kd = kernel(cfg, &model, p)?;
            points
                .iter()
                .map(|&x| decay_scan_with(&kd, x, cfg.direction, &ds))
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();

    let mut csv = String::from("schema_version,model,p,point,distance,log_magnitude\n");
    let mut checks = Vec::new();
    let mut series = Vec::new();
    for s in &scans {
        for (d, l) in s.distances.iter().zip(&s.log_magnitudes) {
            let _ = writeln!(csv, "{SCHEMA_VERSION},{},{},{},{d},{l}", field(model), s.p, field(&s.point));
        }
        let tag = format!("p={} at {}", s.p, s.point);
        checks.push(Check::close(
            format!("near-zone exponent, {tag}"),
            s.near_target,
            s.near_exponent,
            cfg.tolerances.decay,
        ));
        checks.push(Check::holds(format!("far zone monotone, {tag}"), s.monotone));
        checks.push(Check::at_least(
            format!("Agmon exponent positive, {tag}"),
            f64::MIN_POSITIVE,
            s.agmon_exponent.unwrap_or(f64::NAN),
        ));
        series.push(Series {
            label: tag,
            points: s.distances.iter().copied().zip(s.log_magnitudes.iter().copied()).collect(),
        });
    }
    // the near-zone check is relative to |target|, not max(|target|, 1)
    for c in checks.iter_mut().filter(|c| c.relation == Relation::Close) {
        c.pass = (c.measured - c.target).abs() <= c.tolerance * c.target.abs();
    }
    let svg = line_chart(&format!("off-diagonal decay on {model}"), "distance", "log |P_p|", &series);
    Ok(finish(cfg, checks, csv, json!({ "scans": scans }), vec![("decay".into(), svg)]))
}

fn run_orbifold(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let model = cfg.kaehler_model()?;
    let k = model.quotient_order();
    let prof = orbifold_profile(&model, &cfg.p)?;

    let mut csv = String::from("schema_version,table,p,d,value,reference\n");
    for r in &prof.fixed {
        let _ = writeln!(csv, "{SCHEMA_VERSION},fixed,{},0,{},{k}", r.p, r.ratio);
    }
    for r in &prof.envelope {
        let _ = writeln!(csv, "{SCHEMA_VERSION},envelope,{},{},{},{}", r.p, r.d, r.correction, r.envelope);
    }

    let mut checks = Vec::new();
    match prof.deviation_ratio {
        Some(r) => checks.push(Check::at_most("fixed-point deviation ratio p to 4p", cfg.tolerances.ratio, r)),
        None => checks.push(Check::holds("p-range contains a pair p, 4p", false)),
    }
    checks.push(Check::holds("correction inside Gaussian envelope", prof.within_envelope));
    if k == 2 {
        checks.push(Check::at_least("envelope log-linear fit R^2", cfg.tolerances.r2, prof.r_squared));
    }
    let mass = (k as f64 - 1.0) / k as f64;
    for (p, m) in &prof.correction_mass {
        checks.push(Check::close(format!("correction mass p={p}"), mass, *m, cfg.tolerances.model));
    }
    if let Some(f) = &prof.equator_fit {
        let eq = ChartPoint::affine(Complex64::new(1.0, 0.0));
        let target = b1(&curvature_at(&model, eq)?);
        checks.push(Check::close("b1 at the equator", target, f.coefficient(1), cfg.tolerances.b1));
    }

    let fixed = Series {
        label: format!("B_p(0)/p, k={k}"),
        points: prof.fixed.iter().map(|r| (1.0 / r.p as f64, r.ratio)).collect(),
    };
    let env = Series {
        label: "log |correction|".into(),
        points: prof.envelope.iter().map(|r| (r.pd2, r.correction.abs().ln())).collect(),
    };
    let svgs = vec![
        ("fixed".into(), line_chart("fixed-point ratio", "1/p", "B_p(0)/p", &[fixed])),
        ("envelope".into(), line_chart("correction profile", "p d^2", "log |correction|", &[env])),
    ];
    Ok(finish(cfg, checks, csv, json!({ "profile": prof }), svgs))
}

fn curvature_label(c: &[f64; 2]) -> String {
    format!("rX={:.6},rE={:.6}", c[0], c[1])
}

fn run_model_check(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let spec = ModelSpectrum::kaehler(1);
    let tol = cfg.tolerances.model;
    let mut csv = String::from("schema_version,u,rx,re,volterra,closed,b1,deviation\n");
    let mut checks = Vec::new();
    for c in &cfg.curvatures {
        let cv = CurvatureScalars::new(c[0], c[1]);
        let label = curvature_label(c);
        for &u in &cfg.u {
            let v = j2u_volterra(u, &cv)?;
            let w = j2u_closed(u, &cv)?;
            let dev = j2u_closed_deviation(u, &cv)?;
            let _ = writeln!(csv, "{SCHEMA_VERSION},{u},{},{},{v},{w},{},{dev}", c[0], c[1], b1(&cv));
            checks.push(Check::close(format!("Volterra vs closed form, u={u}, {label}"), w, v, tol));
        }
        checks.push(Check::close(
            format!("large-u limit vs b1, {label}"),
            b1(&cv),
            j2u_closed(40.0, &cv)?,
            tol,
        ));
    }
    // kernel-level oracles depend only on u
    let z = [0.3, -0.2];
    let zp = [-0.1, 0.4];
    for &u in &cfg.u {
        let diag = model_heat_kernel(&[0.0, 0.0], &[0.0, 0.0], u, &spec)?.re;
        checks.push(Check::close(format!("heat kernel diagonal vs b0u, u={u}"), b0u(u, &spec)?, diag, tol));
        let half = u / 2.0;
        let lhs = plane_integral(
            |w| {
                model_heat_kernel(&z, &w, half, &spec).unwrap_or(Complex64::new(f64::NAN, 0.0))
                    * model_heat_kernel(&w, &zp, half, &spec).unwrap_or(Complex64::new(f64::NAN, 0.0))
            },
            8.0,
            321,
        );
        let rhs = model_heat_kernel(&z, &zp, u, &spec)?;
        checks.push(Check::close(
            format!("semigroup at u/2+u/2, u={u}"),
            0.0,
            (lhs - rhs).norm() / rhs.norm(),
            tol,
        ));
    }
    let details = json!({ "point": z, "point_prime": zp });
    Ok(finish(cfg, checks, csv, details, Vec::new()))
}

fn run_heat(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let spec = ModelSpectrum::kaehler(1);
    let mut us = cfg.u.clone();
    us.sort_by(f64::total_cmp);
    let mut csv = String::from("schema_version,u,rx,re,j2u,b1,deviation,b0u_gap\n");
    let mut checks = Vec::new();
    let mut series = Vec::new();
    for c in &cfg.curvatures {
        let cv = CurvatureScalars::new(c[0], c[1]);
        let label = curvature_label(c);
        let mut devs = Vec::with_capacity(us.len());
        for &u in &us {
            let dev = j2u_closed_deviation(u, &cv)?.abs();
            let gap = b0u(u, &spec)? - 1.0;
            let _ = writeln!(
                csv,
                "{SCHEMA_VERSION},{u},{},{},{},{},{dev},{gap}",
                c[0],
                c[1],
                j2u_closed(u, &cv)?,
                b1(&cv)
            );
            devs.push(dev);
        }
        let all_zero = devs.iter().all(|&d| d == 0.0);
        let decreasing = devs.windows(2).all(|w| w[1] < w[0]);
        checks.push(Check::holds(
            format!("|J(u) - b1| strictly decreasing, {label}"),
            all_zero || decreasing,
        ));
        let tail: Vec<(f64, f64)> = us.iter().copied().zip(devs.iter().copied()).filter(|&(u, d)| u >= 1.0 && d > 0.0).collect();
        if tail.len() >= 2 && !all_zero {
            let (x, y): (Vec<f64>, Vec<f64>) = tail.into_iter().unzip();
            checks.push(Check::at_most(format!("exponential rate, {label}"), -2.0 * PI, log_slope(&x, &y)));
        }
        series.push(Series {
            label,
            points: us.iter().zip(&devs).map(|(&u, &d)| (u, d.ln())).collect(),
        });
    }
    let svg = line_chart("convergence of J(u) to b1", "u", "log |J(u) - b1|", &series);
    Ok(finish(cfg, checks, csv, json!({ "u": us }), vec![("convergence".into(), svg)]))
}
