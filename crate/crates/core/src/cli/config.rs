//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are separated by
//! commas, point and curvature lists by semicolons. Unknown keys are errors.

use crate::asymptotics::{DEFAULT_FIT_DEGREE, DEFAULT_P_RANGE, TORUS_P_RANGE};
use crate::geometry::{build_model, Chart, ChartPoint, KaehlerModel, ModelConfig, ModelKind};
use crate::model::VOLTERRA_MAX_U;
use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use super::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Diag,
    Offdiag,
    Orbifold,
    ModelCheck,
    Heat,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Diag => "diag",
            Subcommand::Offdiag => "offdiag",
            Subcommand::Orbifold => "orbifold",
            Subcommand::ModelCheck => "model-check",
            Subcommand::Heat => "heat",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "diag" => Ok(Subcommand::Diag),
            "offdiag" => Ok(Subcommand::Offdiag),
            "orbifold" => Ok(Subcommand::Orbifold),
            "model-check" => Ok(Subcommand::ModelCheck),
            "heat" => Ok(Subcommand::Heat),
            other => Err(ConfigError(format!("unknown subcommand `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Relative tolerance on fitted coefficients (absolute when the target is below 1).
    pub b1: f64,
    /// Relative tolerance on model-kernel oracle pairs.
    pub model: f64,
    /// Relative tolerance on the near-zone Gaussian exponent.
    pub decay: f64,
    /// Largest accepted ratio of fixed-point deviations between `p` and `4p`.
    pub ratio: f64,
    /// Smallest accepted R^2 of the orbifold envelope fit.
    pub r2: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            b1: 2e-2,
            model: 1e-6,
            decay: 5e-2,
            ratio: 0.6,
            r2: 0.95,
        }
    }
}

/// A validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub model: ModelKind,
    pub twist: u32,
    pub perturbation: f64,
    pub tau: [f64; 2],
    pub quotient_order: u32,
    pub p: Vec<u32>,
    /// Fixed grid order; the per-`p` default when absent.
    pub order: Option<usize>,
    pub fit_degree: usize,
    /// Points as `(chart, re, im)`; the chart is `z`, `w` or `inf`.
    pub points: Vec<(String, f64, f64)>,
    pub u: Vec<f64>,
    /// `(r^X, r^E)` pairs for the model-kernel sweeps.
    pub curvatures: Vec<[f64; 2]>,
    pub direction: f64,
    pub distance_max: f64,
    pub distance_count: usize,
    pub tolerances: Tolerances,
    pub csv: String,
    pub json: String,
    pub plots: bool,
}

const KEYS: &[&str] = &[
    "model",
    "twist",
    "perturbation",
    "tau",
    "quotient_order",
    "p",
    "order",
    "fit_degree",
    "points",
    "u",
    "curvatures",
    "direction",
    "distance_max",
    "distance_count",
    "tol_b1",
    "tol_model",
    "tol_decay",
    "tol_ratio",
    "tol_r2",
    "csv",
    "json",
    "plots",
];

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Parses a float, accepting a trailing `pi` factor as in `8pi`.
fn number(key: &str, s: &str) -> Result<f64, ConfigError> {
    let s = s.trim();
    let (body, scale) = match s.strip_suffix("pi") {
        Some("") => ("1", PI),
        Some(b) => (b.trim_end_matches('*'), PI),
        None => (s, 1.0),
    };
    match body.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v * scale),
        _ => err(format!("{key}: `{s}` is not a finite number")),
    }
}

fn integer<T: FromStr>(key: &str, s: &str) -> Result<T, ConfigError> {
    s.trim()
        .parse()
        .or_else(|_| err(format!("{key}: `{}` is not a non-negative integer", s.trim())))
}

fn flag(key: &str, s: &str) -> Result<bool, ConfigError> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => err(format!("{key}: `{other}` is not a boolean")),
    }
}

fn list<T>(key: &str, s: &str, f: impl Fn(&str, &str) -> Result<T, ConfigError>) -> Result<Vec<T>, ConfigError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| f(key, t))
        .collect()
}

fn parse_point(entry: &str) -> Result<(String, f64, f64), ConfigError> {
    let toks: Vec<&str> = entry.split_whitespace().collect();
    match toks.as_slice() {
        ["inf"] => Ok(("inf".into(), 0.0, 0.0)),
        [re, im] => Ok(("z".into(), number("points", re)?, number("points", im)?)),
        [c @ ("z" | "w"), re, im] => Ok((c.to_string(), number("points", re)?, number("points", im)?)),
        _ => err(format!("points: cannot read `{entry}`; expected `[z|w] re im` or `inf`")),
    }
}

fn parse_pair(entry: &str) -> Result<[f64; 2], ConfigError> {
    let toks: Vec<&str> = entry.split_whitespace().collect();
    match toks.as_slice() {
        [a, b] => Ok([number("curvatures", a)?, number("curvatures", b)?]),
        _ => err(format!("curvatures: cannot read `{entry}`; expected `rX rE`")),
    }
}

/// Quotient-compatible `p` near `k j` for the given twist.
fn quotient_range(k: u32, m: u32, js: &[u32]) -> Vec<u32> {
    js.iter().map(|&j| k * j + (k - m % k) % k).collect()
}

impl RunConfig {
    pub fn parse(sub: Subcommand, text: &str) -> Result<Self, ConfigError> {
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return err(format!("line {}: expected `key = value`", lineno + 1));
            };
            let k = k.trim();
            if !KEYS.contains(&k) {
                return err(format!("line {}: unknown key `{k}`", lineno + 1));
            }
            if kv.insert(k, v.trim()).is_some() {
                return err(format!("line {}: duplicate key `{k}`", lineno + 1));
            }
        }
        let get = |k: &str| kv.get(k).copied();

        let model = match get("model") {
            Some(s) => ModelKind::from_str(s).map_err(|e| ConfigError(format!("model: {e}")))?,
            None if sub == Subcommand::Orbifold => ModelKind::CyclicQuotientCP1,
            None => ModelKind::FubiniStudyCP1,
        };
        let twist = get("twist").map(|s| integer("twist", s)).transpose()?.unwrap_or(0);
        let perturbation = get("perturbation")
            .map(|s| number("perturbation", s))
            .transpose()?
            .unwrap_or(if model == ModelKind::PerturbedCP1 { 0.2 } else { 0.0 });
        let tau = match get("tau") {
            Some(s) => {
                let toks: Vec<&str> = s.split_whitespace().collect();
                match toks.as_slice() {
                    [a, b] => [number("tau", a)?, number("tau", b)?],
                    _ => return err("tau: expected `re im`"),
                }
            }
            None => [0.0, 1.0],
        };
        let quotient_order = get("quotient_order")
            .map(|s| integer("quotient_order", s))
            .transpose()?
            .unwrap_or(2);
        let fit_degree = get("fit_degree")
            .map(|s| integer("fit_degree", s))
            .transpose()?
            .unwrap_or(DEFAULT_FIT_DEGREE);

        let p = match get("p") {
            Some(s) => list("p", s, integer::<u32>)?,
            None => match (sub, model) {
                (Subcommand::Offdiag, _) => vec![64],
                (Subcommand::Orbifold, _) if quotient_order == 2 => quotient_range(2, twist, &[8, 16, 32, 64]),
                (Subcommand::Orbifold, _) => quotient_range(quotient_order, twist, &[6, 12, 24]),
                (_, ModelKind::FlatTorus) => TORUS_P_RANGE.to_vec(),
                (_, ModelKind::CyclicQuotientCP1) => {
                    quotient_range(quotient_order, twist, &[12, 16, 20, 24, 32, 40])
                }
                _ => DEFAULT_P_RANGE.to_vec(),
            },
        };
        let order = get("order").map(|s| integer("order", s)).transpose()?;

        let points = match get("points") {
            Some(s) => s
                .split(';')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(parse_point)
                .collect::<Result<Vec<_>, _>>()?,
            None => default_points(sub, model),
        };
        let u = match get("u") {
            Some(s) => list("u", s, number)?,
            None if sub == Subcommand::Heat => vec![0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0],
            None => vec![0.5, 1.0, 2.0, 4.0],
        };
        let curvatures = match get("curvatures") {
            Some(s) => s
                .split(';')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(parse_pair)
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![[8.0 * PI, 0.0], [0.0, 4.0 * PI], [8.0 * PI, 4.0 * PI]],
        };
        let direction = get("direction").map(|s| number("direction", s)).transpose()?.unwrap_or(0.4);
        let distance_max = get("distance_max")
            .map(|s| number("distance_max", s))
            .transpose()?
            .unwrap_or_else(|| {
                if model == ModelKind::FlatTorus {
                    // stay inside the injectivity radius; the kernel is periodic
                    let t = Complex64::new(tau[0], tau[1]);
                    let shortest = [Complex64::new(1.0, 0.0), t, t + 1.0, t - 1.0]
                        .iter()
                        .map(|v| v.norm())
                        .fold(f64::INFINITY, f64::min);
                    0.45 * shortest
                } else {
                    0.6
                }
            });
        let distance_count = get("distance_count")
            .map(|s| integer("distance_count", s))
            .transpose()?
            .unwrap_or(61);

        let d = Tolerances::default();
        let tol = |k: &str, dflt: f64| -> Result<f64, ConfigError> {
            get(k).map(|s| number(k, s)).transpose().map(|v| v.unwrap_or(dflt))
        };
        let tolerances = Tolerances {
            b1: tol("tol_b1", d.b1)?,
            model: tol("tol_model", d.model)?,
            decay: tol("tol_decay", d.decay)?,
            ratio: tol("tol_ratio", d.ratio)?,
            r2: tol("tol_r2", d.r2)?,
        };
        let plots = get("plots").map(|s| flag("plots", s)).transpose()?.unwrap_or(false);
        let name = |k: &str, ext: &str| -> Result<String, ConfigError> {
            let v = get(k).map(str::to_string).unwrap_or_else(|| format!("{}.{ext}", sub.name()));
            if v.is_empty() || v.contains('/') || v.contains('\\') {
                return err(format!("{k}: `{v}` must be a plain file name"));
            }
            Ok(v)
        };

        let cfg = RunConfig {
            subcommand: sub,
            model,
            twist,
            perturbation,
            tau,
            quotient_order,
            p,
            order,
            fit_degree,
            points,
            u,
            curvatures,
            direction,
            distance_max,
            distance_count,
            tolerances,
            csv: name("csv", "csv")?,
            json: name("json", "json")?,
            plots,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.tolerances;
        for (k, v) in [("tol_b1", t.b1), ("tol_model", t.model), ("tol_decay", t.decay), ("tol_ratio", t.ratio), ("tol_r2", t.r2)] {
            if v <= 0.0 {
                return err(format!("{k} must be positive, got {v}"));
            }
        }
        if self.p.is_empty() {
            return err("p: the p-range is empty");
        }
        if self.p.contains(&0) {
            return err("p: powers must be positive");
        }
        let mut sorted = self.p.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.p.len() {
            return err("p: duplicate values");
        }
        if self.csv == self.json {
            return err("csv and json must name different files");
        }
        match self.subcommand {
            Subcommand::Diag => {
                let need = self.fit_degree + 2;
                if self.p.len() < need {
                    return err(format!(
                        "need >= k+2 p-values: fit_degree k = {} needs {need}, got {}",
                        self.fit_degree,
                        self.p.len()
                    ));
                }
                if self.points.is_empty() {
                    return err("points: no sample points");
                }
            }
            Subcommand::Offdiag => {
                if self.points.is_empty() {
                    return err("points: no sample points");
                }
                if self.distance_max <= 0.0 || self.distance_count < 8 {
                    return err("distance_max must be positive and distance_count at least 8");
                }
            }
            Subcommand::Orbifold => {
                if self.model != ModelKind::CyclicQuotientCP1 {
                    return err(format!("orbifold needs model = quotient, got {}", self.model));
                }
                if self.p.len() < 2 {
                    return err("orbifold needs at least two p-values");
                }
            }
            Subcommand::ModelCheck | Subcommand::Heat => {
                if self.u.is_empty() {
                    return err("u: empty list");
                }
                for &u in &self.u {
                    if !(u > 0.0 && u <= VOLTERRA_MAX_U) {
                        return err(format!("u: {u} outside (0, {VOLTERRA_MAX_U}]"));
                    }
                }
                if self.curvatures.is_empty() {
                    return err("curvatures: empty list");
                }
            }
        }
        if matches!(self.subcommand, Subcommand::Diag | Subcommand::Offdiag | Subcommand::Orbifold) {
            let model = self.kaehler_model()?;
            if model.kind() == ModelKind::BargmannFock {
                return err("the plane model has no compact sections; use model-check or heat");
            }
            self.chart_points()?;
        }
        Ok(())
    }

    pub fn kaehler_model(&self) -> Result<KaehlerModel, ConfigError> {
        let cfg = ModelConfig {
            kind: self.model,
            perturbation: self.perturbation,
            tau: Complex64::new(self.tau[0], self.tau[1]),
            twist: self.twist,
            quotient_order: self.quotient_order,
        };
        build_model(&cfg).map_err(|e| ConfigError(format!("model: {e}")))
    }

    pub fn chart_points(&self) -> Result<Vec<ChartPoint>, ConfigError> {
        let sphere = !matches!(self.model, ModelKind::FlatTorus | ModelKind::BargmannFock);
        self.points
            .iter()
            .map(|(c, re, im)| {
                let z = Complex64::new(*re, *im);
                match c.as_str() {
                    "inf" if sphere => Ok(ChartPoint::infinity()),
                    "w" if sphere => Ok(ChartPoint { chart: Chart::Inverted, coord: z }),
                    "z" => Ok(ChartPoint::affine(z)),
                    _ => err(format!("points: chart `{c}` is not available on {}", self.model)),
                }
            })
            .collect()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn default_points(sub: Subcommand, model: ModelKind) -> Vec<(String, f64, f64)> {
    let p = |c: &str, re: f64, im: f64| (c.to_string(), re, im);
    match (sub, model) {
        (_, ModelKind::FlatTorus) => vec![p("z", 0.0, 0.0), p("z", 0.3, 0.6)],
        (_, ModelKind::CyclicQuotientCP1) => vec![p("z", 1.0, 0.0), p("z", 0.0, 1.0)],
        (Subcommand::Offdiag, ModelKind::PerturbedCP1) => vec![p("z", 0.5, 0.2)],
        (Subcommand::Offdiag, _) => vec![p("z", 0.0, 0.0)],
        _ => vec![p("z", 0.0, 0.0), p("z", 0.5, 0.5), p("w", 0.3, -0.2), p("inf", 0.0, 0.0)],
    }
}
