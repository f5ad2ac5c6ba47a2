//! Model Kähler curves: the unit-area Fubini–Study sphere and its rotationally
//! symmetric perturbations, the flat torus, the flat Bargmann–Fock plane and
//! the cyclic quotient of the sphere.
//!
//! Every sphere model has a potential of the form
//! `psi(t) = log(1 + t) + a * t / (1 + t)^2` with `t = |z|^2`, so that
//! `omega = (i / 2 pi) d dbar psi = h dx ^ dy` with `h = F'(t) / pi` where
//! `F(t) = t psi'(t)`. The perturbation is invariant under `z -> 1/z`, which
//! means the same formulas hold verbatim in the inverted chart `w = 1/z`.

use crate::error::{BergmanError, Result};
use crate::quadrature::GaussLegendre;
use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

/// Largest perturbation amplitude accepted by [`build_model`].
pub const MAX_PERTURBATION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    FubiniStudyCP1,
    PerturbedCP1,
    FlatTorus,
    BargmannFock,
    CyclicQuotientCP1,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::FubiniStudyCP1 => "fubini-study",
            ModelKind::PerturbedCP1 => "perturbed",
            ModelKind::FlatTorus => "torus",
            ModelKind::BargmannFock => "bargmann-fock",
            ModelKind::CyclicQuotientCP1 => "quotient",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = BergmanError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fubini-study" | "fs" | "cp1" => Ok(ModelKind::FubiniStudyCP1),
            "perturbed" => Ok(ModelKind::PerturbedCP1),
            "torus" => Ok(ModelKind::FlatTorus),
            "bargmann-fock" | "plane" => Ok(ModelKind::BargmannFock),
            "quotient" | "orbifold" => Ok(ModelKind::CyclicQuotientCP1),
            other => Err(BergmanError::InvalidParameter(format!(
                "unknown model kind `{other}`"
            ))),
        }
    }
}

/// Raw, unvalidated model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Amplitude `a` of the bump `a * s (1 - s)`, `s = |z|^2 / (1 + |z|^2)`.
    pub perturbation: f64,
    pub tau: Complex64,
    /// Degree `m` of the auxiliary bundle `E = O(m)`.
    pub twist: u32,
    pub quotient_order: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::FubiniStudyCP1,
            perturbation: 0.0,
            tau: Complex64::new(0.0, 1.0),
            twist: 0,
            quotient_order: 2,
        }
    }
}

/// A validated model. Construct through [`build_model`] or the shorthand
/// constructors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KaehlerModel {
    kind: ModelKind,
    perturbation: f64,
    tau: Complex64,
    twist: u32,
    quotient_order: u32,
}

impl KaehlerModel {
    pub fn fubini_study(twist: u32) -> Self {
        Self {
            kind: ModelKind::FubiniStudyCP1,
            perturbation: 0.0,
            tau: Complex64::new(0.0, 1.0),
            twist,
            quotient_order: 1,
        }
    }

    pub fn perturbed(amplitude: f64, twist: u32) -> Result<Self> {
        build_model(&ModelConfig {
            kind: ModelKind::PerturbedCP1,
            perturbation: amplitude,
            twist,
            ..ModelConfig::default()
        })
    }

    pub fn flat_torus(tau: Complex64) -> Result<Self> {
        build_model(&ModelConfig {
            kind: ModelKind::FlatTorus,
            tau,
            ..ModelConfig::default()
        })
    }

    pub fn bargmann_fock() -> Self {
        Self {
            kind: ModelKind::BargmannFock,
            perturbation: 0.0,
            tau: Complex64::new(0.0, 1.0),
            twist: 0,
            quotient_order: 1,
        }
    }

    pub fn cyclic_quotient(order: u32, twist: u32) -> Result<Self> {
        build_model(&ModelConfig {
            kind: ModelKind::CyclicQuotientCP1,
            quotient_order: order,
            twist,
            ..ModelConfig::default()
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn perturbation(&self) -> f64 {
        self.perturbation
    }

    pub fn tau(&self) -> Complex64 {
        self.tau
    }

    pub fn twist(&self) -> u32 {
        self.twist
    }

    /// Order of the quotient group; 1 for smooth models.
    pub fn quotient_order(&self) -> u32 {
        self.quotient_order
    }

    pub fn is_sphere(&self) -> bool {
        matches!(
            self.kind,
            ModelKind::FubiniStudyCP1 | ModelKind::PerturbedCP1 | ModelKind::CyclicQuotientCP1
        )
    }

    /// Volume of the (orbifold) quotient: 1 for closed smooth models, 1/k for
    /// the cyclic quotient, infinite for the Bargmann–Fock plane.
    pub fn volume(&self) -> f64 {
        match self.kind {
            ModelKind::BargmannFock => f64::INFINITY,
            ModelKind::CyclicQuotientCP1 => 1.0 / self.quotient_order as f64,
            _ => 1.0,
        }
    }

    pub(crate) fn sphere_potential(&self) -> SpherePotential {
        SpherePotential {
            a: self.perturbation,
        }
    }

    /// Integral of the Kähler form over the (upstairs) manifold, by quadrature.
    pub fn kaehler_area(&self) -> f64 {
        match self.kind {
            ModelKind::BargmannFock => f64::INFINITY,
            ModelKind::FlatTorus => {
                // constant density 1 / Im(tau) over a cell of area Im(tau)
                let h = 1.0 / self.tau.im;
                h * self.tau.im
            }
            _ => {
                // omega = F'(t) dt dtheta / 2 pi, t = s / (1 - s)
                let pot = self.sphere_potential();
                GaussLegendre::new(64).integrate(0.0, 1.0, |s| {
                    let t = s / (1.0 - s);
                    pot.f1(t) * (1.0 + t) * (1.0 + t)
                })
            }
        }
    }
}

impl fmt::Display for KaehlerModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ModelKind::FubiniStudyCP1 => write!(f, "fubini-study(m={})", self.twist),
            ModelKind::PerturbedCP1 => {
                write!(f, "perturbed(a={}, m={})", self.perturbation, self.twist)
            }
            ModelKind::FlatTorus => write!(f, "torus(tau={}+{}i)", self.tau.re, self.tau.im),
            ModelKind::BargmannFock => write!(f, "bargmann-fock"),
            ModelKind::CyclicQuotientCP1 => {
                write!(f, "quotient(k={}, m={})", self.quotient_order, self.twist)
            }
        }
    }
}

/// Validates parameters and builds a model.
pub fn build_model(cfg: &ModelConfig) -> Result<KaehlerModel> {
    match cfg.kind {
        ModelKind::FubiniStudyCP1 => Ok(KaehlerModel::fubini_study(cfg.twist)),
        ModelKind::PerturbedCP1 => {
            let a = cfg.perturbation;
            if !a.is_finite() {
                return Err(BergmanError::InvalidParameter(format!(
                    "perturbation amplitude {a} is not finite"
                )));
            }
            let pot = SpherePotential { a };
            // coarse positivity scan in s = t / (1 + t) over the closed sphere
            for i in 0..=400 {
                let s = i as f64 / 400.0;
                let q2f1 = pot.q2_f1_at_s(s);
                if q2f1 <= 0.0 {
                    let t = if s < 1.0 { s / (1.0 - s) } else { f64::INFINITY };
                    return Err(BergmanError::NonPositiveForm {
                        at: format!("|z|={:.4}", t.sqrt()),
                        density: q2f1,
                    });
                }
            }
            if a.abs() > MAX_PERTURBATION {
                return Err(BergmanError::InvalidParameter(format!(
                    "perturbation amplitude {a} outside [-{MAX_PERTURBATION}, {MAX_PERTURBATION}]"
                )));
            }
            Ok(KaehlerModel {
                kind: ModelKind::PerturbedCP1,
                perturbation: a,
                tau: Complex64::new(0.0, 1.0),
                twist: cfg.twist,
                quotient_order: 1,
            })
        }
        ModelKind::FlatTorus => {
            let tau = cfg.tau;
            if !(tau.im > 0.0) || !tau.re.is_finite() || !tau.im.is_finite() {
                return Err(BergmanError::BadModulus(format!("{}+{}i", tau.re, tau.im)));
            }
            Ok(KaehlerModel {
                kind: ModelKind::FlatTorus,
                perturbation: 0.0,
                tau,
                twist: 0,
                quotient_order: 1,
            })
        }
        ModelKind::BargmannFock => Ok(KaehlerModel::bargmann_fock()),
        ModelKind::CyclicQuotientCP1 => {
            if cfg.quotient_order < 2 {
                return Err(BergmanError::InvalidParameter(format!(
                    "quotient order must be at least 2, got {}",
                    cfg.quotient_order
                )));
            }
            Ok(KaehlerModel {
                kind: ModelKind::CyclicQuotientCP1,
                perturbation: 0.0,
                tau: Complex64::new(0.0, 1.0),
                twist: cfg.twist,
                quotient_order: cfg.quotient_order,
            })
        }
    }
}

/// Radial potential data for the sphere models, as functions of `t = |z|^2`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SpherePotential {
    pub a: f64,
}

impl SpherePotential {
    /// Bump `a t / (1 + t)^2`.
    pub fn phi(&self, t: f64) -> f64 {
        self.a * t / ((1.0 + t) * (1.0 + t))
    }

    /// `(1 + t)^2 F'(t)` as a function of `s = t / (1 + t)`; equals 1 for
    /// Fubini–Study.
    pub fn q2_f1_at_s(&self, s: f64) -> f64 {
        let x = 1.0 - s;
        1.0 + self.a * (1.0 - 6.0 * x + 6.0 * x * x)
    }

    /// `F'(t)`, so that the Kähler density is `F'(t) / pi`.
    pub fn f1(&self, t: f64) -> f64 {
        let x = 1.0 / (1.0 + t);
        x * x * (1.0 + self.a * (1.0 - 6.0 * x + 6.0 * x * x))
    }

    fn f2(&self, t: f64) -> f64 {
        let x = 1.0 / (1.0 + t);
        let x3 = x * x * x;
        -2.0 * x3 + self.a * (-2.0 * x3 + 18.0 * x3 * x - 24.0 * x3 * x * x)
    }

    fn f3(&self, t: f64) -> f64 {
        let x = 1.0 / (1.0 + t);
        let x4 = x * x * x * x;
        6.0 * x4 + self.a * (6.0 * x4 - 72.0 * x4 * x + 120.0 * x4 * x * x)
    }

    /// Kähler density `h = F'(t) / pi`.
    pub fn density(&self, t: f64) -> f64 {
        self.f1(t) / PI
    }

    /// `d/dt log F'(t)`.
    pub fn dlog_density(&self, t: f64) -> f64 {
        self.f2(t) / self.f1(t)
    }

    /// Gaussian curvature `K = -(1 / 2h) Laplacian(log h)`.
    pub fn gauss_curvature(&self, t: f64) -> f64 {
        let f1 = self.f1(t);
        let l1 = self.f2(t) / f1;
        let l2 = self.f3(t) / f1 - l1 * l1;
        -2.0 * PI * (l1 + t * l2) / f1
    }

    /// Geodesic distance from the pole `z = 0` to `|z| = r`:
    /// `(1 / sqrt(pi)) * integral_0^{atan r} sqrt(1 + a g(theta)) dtheta`.
    pub fn radial_distance(&self, r: f64) -> f64 {
        let theta = r.atan();
        if theta == 0.0 {
            return 0.0;
        }
        if self.a == 0.0 {
            return theta / PI.sqrt();
        }
        let rule = GaussLegendre::new(48);
        let v = rule.integrate(0.0, theta, |th| {
            let c2 = th.cos().powi(2);
            (1.0 + self.a * (1.0 - 6.0 * c2 + 6.0 * c2 * c2)).sqrt()
        });
        v / PI.sqrt()
    }
}

/// Which affine chart of the sphere a coordinate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chart {
    /// `z`, covering everything but the point at infinity.
    Affine,
    /// `w = 1 / z`, covering everything but `z = 0`.
    Inverted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartPoint {
    pub chart: Chart,
    pub coord: Complex64,
}

impl ChartPoint {
    pub fn affine(z: Complex64) -> Self {
        Self {
            chart: Chart::Affine,
            coord: z,
        }
    }

    pub fn inverted(w: Complex64) -> Self {
        Self {
            chart: Chart::Inverted,
            coord: w,
        }
    }

    /// The north pole `z = infinity`.
    pub fn infinity() -> Self {
        Self::inverted(Complex64::new(0.0, 0.0))
    }

    /// Same point in the other chart; fails at the chart's own pole.
    pub fn switch(&self) -> Result<Self> {
        if self.coord.norm_sqr() == 0.0 {
            return Err(BergmanError::OutOfChart(format!("{self}")));
        }
        let other = match self.chart {
            Chart::Affine => Chart::Inverted,
            Chart::Inverted => Chart::Affine,
        };
        Ok(Self {
            chart: other,
            coord: self.coord.inv(),
        })
    }

    /// The chart in which `|coord| <= 1`.
    pub fn canonical(&self) -> Self {
        if self.coord.norm() > 1.0 {
            self.switch().expect("nonzero coordinate")
        } else {
            *self
        }
    }

    /// Re-expresses the point in `chart`.
    pub fn in_chart(&self, chart: Chart) -> Result<Self> {
        if self.chart == chart {
            Ok(*self)
        } else {
            self.switch()
        }
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.coord.re.is_finite() && self.coord.im.is_finite() {
            Ok(())
        } else {
            Err(BergmanError::OutOfChart(format!("{self}")))
        }
    }
}

impl From<Complex64> for ChartPoint {
    fn from(z: Complex64) -> Self {
        Self::affine(z)
    }
}

impl fmt::Display for ChartPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.chart {
            Chart::Affine => "z",
            Chart::Inverted => "w",
        };
        write!(f, "{tag}={}{:+}i", self.coord.re, self.coord.im)
    }
}

/// Pointwise metric data in chart coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricData {
    /// Riemannian metric `g = omega(., J .)`.
    pub g: Matrix2<f64>,
    /// `h` in `omega = h dx ^ dy`.
    pub omega_density: f64,
    /// Volume density in geodesic normal coordinates centred at the chart
    /// origin.
    pub kappa: f64,
    /// Complex structure, `J d/dx = d/dy`.
    pub j: Matrix2<f64>,
}

impl MetricData {
    /// `omega(u, v)` for tangent vectors in chart coordinates.
    pub fn omega(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        self.omega_density * (u[0] * v[1] - u[1] * v[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureData {
    /// Scalar curvature (twice the Gauss curvature).
    pub rx: f64,
    /// `sqrt(-1) sum_i R^E(e_i, J e_i)` for `E = O(m)`.
    pub re: f64,
}

fn complex_structure() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

fn conformal_metric(h: f64, kappa: f64) -> MetricData {
    MetricData {
        g: Matrix2::new(h, 0.0, 0.0, h),
        omega_density: h,
        kappa,
        j: complex_structure(),
    }
}

/// Conformal factor `h` of the model at a chart point.
pub fn omega_density(model: &KaehlerModel, pt: impl Into<ChartPoint>) -> Result<f64> {
    Ok(metric_at(model, pt)?.omega_density)
}

pub fn metric_at(model: &KaehlerModel, pt: impl Into<ChartPoint>) -> Result<MetricData> {
    let pt = pt.into();
    pt.check_finite()?;
    match model.kind {
        ModelKind::FlatTorus => {
            if pt.chart != Chart::Affine {
                return Err(BergmanError::OutOfChart(format!("{pt} (torus has one chart)")));
            }
            Ok(conformal_metric(1.0 / model.tau.im, 1.0))
        }
        ModelKind::BargmannFock => {
            if pt.chart != Chart::Affine {
                return Err(BergmanError::OutOfChart(format!("{pt} (plane has one chart)")));
            }
            Ok(conformal_metric(1.0, 1.0))
        }
        _ => {
            let pot = model.sphere_potential();
            let r = pt.coord.norm();
            let t = r * r;
            let h = pot.density(t);
            let kappa = if r == 0.0 {
                1.0
            } else {
                h.sqrt() * r / pot.radial_distance(r)
            };
            Ok(conformal_metric(h, kappa))
        }
    }
}

pub fn scalar_curvature(model: &KaehlerModel, pt: impl Into<ChartPoint>) -> Result<CurvatureData> {
    let pt = pt.into();
    pt.check_finite()?;
    match model.kind {
        ModelKind::FlatTorus | ModelKind::BargmannFock => {
            if pt.chart != Chart::Affine {
                return Err(BergmanError::OutOfChart(format!("{pt}")));
            }
            Ok(CurvatureData { rx: 0.0, re: 0.0 })
        }
        _ => {
            let pot = model.sphere_potential();
            let t = pt.coord.norm_sqr();
            let rx = 2.0 * pot.gauss_curvature(t);
            // i R^E / 2 pi = m omega_FS, so rE = 4 pi m h_FS / h
            let q = 1.0 + t;
            let re = 4.0 * PI * model.twist as f64 / (q * q * pot.f1(t));
            Ok(CurvatureData { rx, re })
        }
    }
}

/// Geodesic distance from the chart origin to a point (the pole `z = 0` for
/// sphere models).
pub fn distance_from_origin(model: &KaehlerModel, pt: impl Into<ChartPoint>) -> Result<f64> {
    let pt = pt.into();
    geodesic_distance(model, ChartPoint::affine(Complex64::new(0.0, 0.0)), pt)
}

/// Riemannian distance between two points. For the cyclic quotient this is
/// the distance on the quotient, the minimum over group translates.
pub fn geodesic_distance(
    model: &KaehlerModel,
    x: impl Into<ChartPoint>,
    y: impl Into<ChartPoint>,
) -> Result<f64> {
    let x = x.into();
    let y = y.into();
    x.check_finite()?;
    y.check_finite()?;
    match model.kind {
        ModelKind::BargmannFock => {
            if x.chart != Chart::Affine || y.chart != Chart::Affine {
                return Err(BergmanError::OutOfChart("plane has one chart".into()));
            }
            Ok((x.coord - y.coord).norm())
        }
        ModelKind::FlatTorus => {
            if x.chart != Chart::Affine || y.chart != Chart::Affine {
                return Err(BergmanError::OutOfChart("torus has one chart".into()));
            }
            Ok(torus_distance(model.tau, x.coord - y.coord))
        }
        ModelKind::FubiniStudyCP1 => Ok(fs_distance(x, y)),
        ModelKind::CyclicQuotientCP1 => {
            let k = model.quotient_order;
            let mut best = f64::INFINITY;
            for j in 0..k {
                let g = Complex64::from_polar(1.0, 2.0 * PI * j as f64 / k as f64);
                // z -> g z reads w -> w / g in the inverted chart
                let gx = match x.chart {
                    Chart::Affine => ChartPoint::affine(g * x.coord),
                    Chart::Inverted => ChartPoint::inverted(x.coord / g),
                };
                best = best.min(fs_distance(gx, y));
            }
            Ok(best)
        }
        ModelKind::PerturbedCP1 => perturbed_distance(model, x, y),
    }
}

/// Distance on the flat torus `C / (Z + tau Z)` with the unit-area metric.
fn torus_distance(tau: Complex64, delta: Complex64) -> f64 {
    // coefficients of delta in the lattice basis {1, tau}
    let beta = delta.im / tau.im;
    let alpha = delta.re - beta * tau.re;
    let a0 = alpha - alpha.round();
    let b0 = beta - beta.round();
    let mut best = f64::INFINITY;
    for m in -3..=3 {
        for n in -3..=3 {
            let v = Complex64::new(a0 + m as f64, 0.0) + tau * (b0 + n as f64);
            best = best.min(v.norm());
        }
    }
    best / tau.im.sqrt()
}

/// Spherical distance on the unit-area round sphere, radius `1 / (2 sqrt(pi))`.
fn fs_distance(x: ChartPoint, y: ChartPoint) -> f64 {
    let y = if x.chart == y.chart {
        y
    } else {
        match y.switch() {
            Ok(p) => p,
            Err(_) => {
                // y is the pole of its own chart, i.e. the antipode of x's chart origin
                let r = x.coord.norm();
                return (1.0f64).atan2(r) / PI.sqrt();
            }
        }
    };
    let num = (x.coord - y.coord).norm();
    let den = (Complex64::new(1.0, 0.0) + x.coord.conj() * y.coord).norm();
    num.atan2(den) / PI.sqrt()
}

fn perturbed_distance(model: &KaehlerModel, x: ChartPoint, y: ChartPoint) -> Result<f64> {
    let pot = model.sphere_potential();
    // the pole of either chart gives a closed-form radial distance
    let same = if x.chart == y.chart { y } else { y.switch().unwrap_or(y) };
    if x.coord.norm_sqr() == 0.0 {
        return Ok(if same.chart == x.chart {
            pot.radial_distance(same.coord.norm())
        } else {
            total_meridian(&pot)
        });
    }
    if same.chart == x.chart && same.coord.norm_sqr() == 0.0 {
        return Ok(pot.radial_distance(x.coord.norm()));
    }
    if same.chart != x.chart {
        // y is the antipodal pole of x's chart
        return Ok(total_meridian(&pot) - pot.radial_distance(x.coord.norm()));
    }
    let (mut a, mut b) = (x, same);
    // work in the chart where the pair sits closest to the origin
    if a.coord.norm() > 1.0 && b.coord.norm() > 1.0 {
        a = a.switch()?;
        b = b.switch()?;
    }
    if a.coord.norm() > 50.0 || b.coord.norm() > 50.0 {
        return Err(BergmanError::OutOfChart(format!(
            "pair {a}, {b} straddles the chart poles"
        )));
    }
    shoot_geodesic(model, a, b)
}

fn total_meridian(pot: &SpherePotential) -> f64 {
    pot.radial_distance(f64::INFINITY)
}

/// Boundary-value geodesic by Newton shooting on (initial angle, length),
/// started from the Fubini–Study geodesic.
fn shoot_geodesic(model: &KaehlerModel, x: ChartPoint, y: ChartPoint) -> Result<f64> {
    let one = Complex64::new(1.0, 0.0);
    let mut angle = ((y.coord - x.coord) / (one + x.coord.conj() * y.coord)).arg();
    let mut len = fs_distance(x, y);
    if len == 0.0 {
        return Ok(0.0);
    }
    let target = y.coord;
    let eval = |ang: f64, l: f64| -> Result<Complex64> {
        Ok(exp_map(model, x, ang, l)?.coord - target)
    };
    for _ in 0..40 {
        let r = eval(angle, len)?;
        if r.norm() < 1e-13 * (1.0 + target.norm()) {
            return Ok(len);
        }
        let ha = 1e-7;
        let hl = 1e-7 * len.max(1e-3);
        let da = (eval(angle + ha, len)? - eval(angle - ha, len)?) / (2.0 * ha);
        let dl = (eval(angle, len + hl)? - eval(angle, len - hl)?) / (2.0 * hl);
        // solve [da dl] [dA dL]^T = -r over the reals
        let (m11, m12, m21, m22) = (da.re, dl.re, da.im, dl.im);
        let det = m11 * m22 - m12 * m21;
        if det.abs() < 1e-300 {
            break;
        }
        let step_a = -(m22 * r.re - m12 * r.im) / det;
        let step_l = -(-m21 * r.re + m11 * r.im) / det;
        angle += step_a;
        len = (len + step_l).max(0.5 * len);
    }
    let r = eval(angle, len)?;
    if r.norm() < 1e-9 {
        Ok(len)
    } else {
        Err(BergmanError::QuadratureDiverged(format!(
            "geodesic shooting from {x} to {y} stalled at residual {:e}",
            r.norm()
        )))
    }
}

/// Follows the unit-speed geodesic from `x` leaving at chart angle
/// `direction` for arc length `length`.
pub fn exp_map(
    model: &KaehlerModel,
    x: impl Into<ChartPoint>,
    direction: f64,
    length: f64,
) -> Result<ChartPoint> {
    let x = x.into();
    x.check_finite()?;
    let unit = Complex64::from_polar(1.0, direction);
    match model.kind {
        ModelKind::BargmannFock => Ok(ChartPoint::affine(x.coord + unit * length)),
        ModelKind::FlatTorus => {
            Ok(ChartPoint::affine(x.coord + unit * length * model.tau.im.sqrt()))
        }
        ModelKind::FubiniStudyCP1 | ModelKind::CyclicQuotientCP1 => {
            // move x to the origin with an isometry, walk along the ray, move back
            let r = (PI.sqrt() * length).tan();
            if !r.is_finite() || r < 0.0 {
                return Err(BergmanError::OutOfChart(format!(
                    "geodesic of length {length} passes the antipode"
                )));
            }
            let w = unit * r;
            let a = x.coord;
            let one = Complex64::new(1.0, 0.0);
            let den = one - a.conj() * w;
            if den.norm() < 1e-14 {
                return Ok(antipodal_pole(x.chart));
            }
            Ok(ChartPoint {
                chart: x.chart,
                coord: (w + a) / den,
            })
        }
        ModelKind::PerturbedCP1 => integrate_geodesic(model, x, unit, length),
    }
}

/// The point that is the pole of `chart`, expressed in the other chart.
fn antipodal_pole(chart: Chart) -> ChartPoint {
    match chart {
        Chart::Affine => ChartPoint::infinity(),
        Chart::Inverted => ChartPoint::affine(Complex64::new(0.0, 0.0)),
    }
}

/// RK4 on the geodesic equation of the conformal metric `h |dz|^2`.
fn integrate_geodesic(
    model: &KaehlerModel,
    x: ChartPoint,
    unit: Complex64,
    length: f64,
) -> Result<ChartPoint> {
    let pot = model.sphere_potential();
    let h0 = pot.density(x.coord.norm_sqr());
    // state: position, coordinate velocity with g(v, v) = 1
    let mut state = [x.coord.re, x.coord.im, unit.re / h0.sqrt(), unit.im / h0.sqrt()];
    let rhs = |s: &[f64; 4]| -> [f64; 4] {
        let t = s[0] * s[0] + s[1] * s[1];
        // sigma = log(h) / 2 so grad sigma = (d/dt log F') * (x, y)
        let l1 = pot.dlog_density(t);
        let (sx, sy) = (l1 * s[0], l1 * s[1]);
        let (vx, vy) = (s[2], s[3]);
        [
            vx,
            vy,
            -sx * (vx * vx - vy * vy) - 2.0 * sy * vx * vy,
            -sy * (vy * vy - vx * vx) - 2.0 * sx * vx * vy,
        ]
    };
    let steps = ((length / 2.5e-4).ceil() as usize).max(64);
    let dt = length / steps as f64;
    for _ in 0..steps {
        let k1 = rhs(&state);
        let k2 = rhs(&add(&state, &k1, 0.5 * dt));
        let k3 = rhs(&add(&state, &k2, 0.5 * dt));
        let k4 = rhs(&add(&state, &k3, dt));
        for i in 0..4 {
            state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !(state[0].is_finite() && state[1].is_finite()) || state[0].hypot(state[1]) > 1e6 {
            return Err(BergmanError::OutOfChart(
                "geodesic left the chart; start from the other chart".into(),
            ));
        }
    }
    Ok(ChartPoint {
        chart: x.chart,
        coord: Complex64::new(state[0], state[1]),
    })
}

fn add(s: &[f64; 4], k: &[f64; 4], c: f64) -> [f64; 4] {
    [s[0] + c * k[0], s[1] + c * k[1], s[2] + c * k[2], s[3] + c * k[3]]
}
