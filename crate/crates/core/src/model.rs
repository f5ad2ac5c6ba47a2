//! Euclidean model kernels and the coefficient machinery for the first
//! correction term.
//!
//! Vectors of `R^{2n}` are stored as `[x_1, y_1, x_2, y_2, ...]` with
//! `J (x, y) = (-y, x)` on each complex line. The real pairing used in the
//! phases is `<J Z, Z'> = sum_j (x_j y'_j - y_j x'_j)`, which vanishes on the
//! diagonal. With this convention the model projector and the heat kernel
//! are annihilated by `Q_0 = -Delta + pi^2 |Z|^2 - 2 pi + 2 i pi (J Z . grad)`.

use crate::error::{BergmanError, Result};
use crate::quadrature::{pairwise_sum, GaussHermite, GaussLegendre};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Largest `u` accepted by [`j2u_volterra`].
pub const VOLTERRA_MAX_U: f64 = 8.0;
/// Below this `u` the closed form switches to its Taylor series.
pub const SERIES_CUTOFF: f64 = 1e-3;

/// Eigenvalues `a_1 <= ... <= a_n` of the model operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpectrum {
    a: Vec<f64>,
}

impl ModelSpectrum {
    pub fn new(mut a: Vec<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(BergmanError::InvalidParameter("empty spectrum".into()));
        }
        if let Some(bad) = a.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(BergmanError::InvalidParameter(format!(
                "spectrum entries must be positive, got {bad}"
            )));
        }
        a.sort_by(f64::total_cmp);
        Ok(Self { a })
    }

    /// The Kähler normalization: every `a_j = 2 pi`.
    pub fn kaehler(n: usize) -> Self {
        Self {
            a: vec![2.0 * PI; n.max(1)],
        }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.a
    }

    pub fn det(&self) -> f64 {
        self.a.iter().product()
    }

    pub fn trace(&self) -> f64 {
        self.a.iter().sum()
    }

    /// `min_j a_j / 2 pi`; 1 in the Kähler normalization.
    pub fn mu0(&self) -> f64 {
        self.a[0] / (2.0 * PI)
    }

    fn check_len(&self, z: &[f64]) -> Result<()> {
        if z.len() == 2 * self.n() {
            Ok(())
        } else {
            Err(BergmanError::InvalidParameter(format!(
                "expected a vector of length {}, got {}",
                2 * self.n(),
                z.len()
            )))
        }
    }
}

/// Curvature values at the base point of a surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureScalars {
    pub rx: f64,
    pub re: f64,
}

impl CurvatureScalars {
    pub fn new(rx: f64, re: f64) -> Self {
        Self { rx, re }
    }

    /// Gaussian curvature `K = r^X / 2`.
    pub fn sectional(&self) -> f64 {
        0.5 * self.rx
    }

    /// `R(u, v) w = K (<v, w> u - <u, w> v)`.
    pub fn riemann(&self, u: [f64; 2], v: [f64; 2], w: [f64; 2]) -> [f64; 2] {
        let k = self.sectional();
        let vw = dot(v, w);
        let uw = dot(u, w);
        [k * (vw * u[0] - uw * v[0]), k * (vw * u[1] - uw * v[1])]
    }

    /// `R^E(u, v) = -(i/2) r^E omega_0(u, v)`, `omega_0(e_1, e_2) = 1`.
    pub fn re_form(&self, u: [f64; 2], v: [f64; 2]) -> Complex64 {
        Complex64::new(0.0, -0.5 * self.re * (u[0] * v[1] - u[1] * v[0]))
    }

    /// Scalar curvature from the tensor: `-sum_ij <R(e_i, e_j) e_i, e_j>`.
    pub fn scalar_from_tensor(&self) -> f64 {
        let e = [[1.0, 0.0], [0.0, 1.0]];
        let mut s = 0.0;
        for ei in e {
            for ej in e {
                s -= dot(self.riemann(ei, ej, ei), ej);
            }
        }
        s
    }

    /// `i sum_i R^E(e_i, J e_i)`; equals `r^E`.
    pub fn re_trace(&self) -> f64 {
        let e = [[1.0, 0.0], [0.0, 1.0]];
        let s: Complex64 = e.iter().map(|&ei| self.re_form(ei, rot(ei))).sum();
        (Complex64::new(0.0, 1.0) * s).re
    }
}

pub(crate) fn dot(u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * v[0] + u[1] * v[1]
}

/// `J (x, y) = (-y, x)`.
pub(crate) fn rot(u: [f64; 2]) -> [f64; 2] {
    [-u[1], u[0]]
}

/// Model Bergman projector
/// `prod_j (a_j / 2 pi) exp(-(a_j/4) |z_j - z'_j|^2 - (i a_j / 2) <J Z_j, Z'_j>)`.
pub fn model_bergman(z: &[f64], zp: &[f64], spec: &ModelSpectrum) -> Result<Complex64> {
    spec.check_len(z)?;
    spec.check_len(zp)?;
    let mut log = Complex64::new(0.0, 0.0);
    let mut pref = 1.0;
    for (j, &a) in spec.a.iter().enumerate() {
        let (x, y, xp, yp) = (z[2 * j], z[2 * j + 1], zp[2 * j], zp[2 * j + 1]);
        let d2 = (x - xp).powi(2) + (y - yp).powi(2);
        log += Complex64::new(-0.25 * a * d2, -0.5 * a * (x * yp - y * xp));
        pref *= a / (2.0 * PI);
    }
    Ok(pref * log.exp())
}

/// Mehler heat kernel `exp(-u L)(Z, Z')` on functions.
pub fn model_heat_kernel(z: &[f64], zp: &[f64], u: f64, spec: &ModelSpectrum) -> Result<Complex64> {
    check_u(u)?;
    spec.check_len(z)?;
    spec.check_len(zp)?;
    let mut log = Complex64::new(0.0, 0.0);
    for (j, &a) in spec.a.iter().enumerate() {
        let (x, y, xp, yp) = (z[2 * j], z[2 * j + 1], zp[2 * j], zp[2 * j + 1]);
        let d2 = (x - xp).powi(2) + (y - yp).powi(2);
        let coth = 1.0 / (u * a).tanh();
        log += Complex64::new(-0.25 * a * coth * d2, -0.5 * a * (x * yp - y * xp));
    }
    Ok(b0u(u, spec)? * log.exp())
}

/// `prod_j (a_j / 2 pi) / (1 - exp(-2 u a_j))`.
pub fn b0u(u: f64, spec: &ModelSpectrum) -> Result<f64> {
    check_u(u)?;
    Ok(spec
        .a
        .iter()
        .map(|&a| a / (2.0 * PI) / -(-2.0 * u * a).exp_m1())
        .product())
}

fn check_u(u: f64) -> Result<()> {
    if u > 0.0 && u.is_finite() {
        Ok(())
    } else {
        Err(BergmanError::InvalidParameter(format!("u must be positive, got {u}")))
    }
}

/// Trapezoid rule on `[-half_width, half_width]^2` with `n` points per side,
/// for rapidly decaying integrands on the plane.
pub fn plane_integral<F>(f: F, half_width: f64, n: usize) -> Complex64
where
    F: Fn([f64; 2]) -> Complex64,
{
    let h = 2.0 * half_width / (n - 1) as f64;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let x = -half_width + i as f64 * h;
        let row: Vec<Complex64> = (0..n)
            .map(|j| f([x, -half_width + j as f64 * h]))
            .collect();
        rows.push(crate::quadrature::pairwise_sum_complex(&row));
    }
    crate::quadrature::pairwise_sum_complex(&rows) * (h * h)
}

/// Uniform square grid of `n x n` points with spacing `h`, centred at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneGrid {
    pub n: usize,
    pub h: f64,
}

impl PlaneGrid {
    pub fn new(n: usize, h: f64) -> Result<Self> {
        if n < 5 || !(h > 0.0) {
            return Err(BergmanError::GridTooCoarse(format!(
                "need at least 5 points per side and positive spacing (n={n}, h={h})"
            )));
        }
        Ok(Self { n, h })
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.n - 1) as f64 * self.h
    }

    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        let c = self.half_width();
        [i as f64 * self.h - c, j as f64 * self.h - c]
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    pub fn sample<F: Fn([f64; 2]) -> Complex64>(&self, f: F) -> Vec<Complex64> {
        let mut v = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                v.push(f(self.point(i, j)));
            }
        }
        v
    }

    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i > 0 && j > 0 && i + 1 < self.n && j + 1 < self.n
    }
}

/// Applies `Q_0 = -Delta + (a/2)^2 |Z|^2 - a + i a (J Z . grad)` with
/// second-order central differences; boundary entries are set to zero.
///
/// Fails with `GridTooCoarse` when the field is not resolved (the fourth-order
/// Laplacian differs from the second-order one by more than 1%) or is not
/// negligible on the boundary.
pub fn q0_apply(f: &[Complex64], grid: &PlaneGrid, spec: &ModelSpectrum) -> Result<Vec<Complex64>> {
    if spec.n() != 1 {
        return Err(BergmanError::InvalidParameter("q0_apply is implemented for n = 1".into()));
    }
    let n = grid.n;
    if f.len() != n * n {
        return Err(BergmanError::InvalidParameter(format!(
            "field has {} samples, grid has {}",
            f.len(),
            n * n
        )));
    }
    let a = spec.a[0];
    let h = grid.h;
    let at = |i: usize, j: usize| f[grid.index(i, j)];
    let fmax = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let edge = (0..n)
        .flat_map(|k| [at(0, k), at(n - 1, k), at(k, 0), at(k, n - 1)])
        .map(|v| v.norm())
        .fold(0.0, f64::max);
    if edge > 1e-6 * fmax {
        return Err(BergmanError::GridTooCoarse(format!(
            "field is {:.1e} of its maximum on the boundary; enlarge the grid",
            edge / fmax
        )));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let c = at(i, j);
            let lap2 = (at(i + 1, j) + at(i - 1, j) + at(i, j + 1) + at(i, j - 1) - 4.0 * c) / (h * h);
            if i >= 2 && j >= 2 && i + 2 < n && j + 2 < n {
                let d4 = |m2: Complex64, m1: Complex64, p1: Complex64, p2: Complex64| {
                    (-m2 + 16.0 * m1 - 30.0 * c + 16.0 * p1 - p2) / (12.0 * h * h)
                };
                let lap4 = d4(at(i - 2, j), at(i - 1, j), at(i + 1, j), at(i + 2, j))
                    + d4(at(i, j - 2), at(i, j - 1), at(i, j + 1), at(i, j + 2));
                worst = worst.max((lap4 - lap2).norm());
                scale = scale.max(lap4.norm());
            }
            let dx = (at(i + 1, j) - at(i - 1, j)) / (2.0 * h);
            let dy = (at(i, j + 1) - at(i, j - 1)) / (2.0 * h);
            let [x, y] = grid.point(i, j);
            let r2 = x * x + y * y;
            out[grid.index(i, j)] = -lap2 + (0.25 * a * a * r2 - a) * c
                + Complex64::new(0.0, a) * (-y * dx + x * dy);
        }
    }
    if worst > 1e-2 * scale {
        return Err(BergmanError::GridTooCoarse(format!(
            "Laplacian not resolved (relative stencil gap {:.1e})",
            worst / scale
        )));
    }
    Ok(out)
}

/// The curvature bracket of `Q_2` applied to `exp(-pi |Z|^2 / (2 tanh(2 pi u_1)))`,
/// times that Gaussian.
pub fn q2_apply_gaussian(u1: f64, curv: &CurvatureScalars, z: [f64; 2]) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    let e = [[1.0, 0.0], [0.0, 1.0]];
    let jz = rot(z);
    let coth = 1.0 / (2.0 * PI * u1).tanh();
    let mut bracket = PI * i * curv.re_form(z, jz)
        - PI * PI / 6.0 * dot(curv.riemann(z, jz, z), jz);
    for ei in e {
        bracket -= 0.5 * PI * i * dot(curv.riemann(z, ei, z), rot(ei));
        bracket += PI * coth / 3.0 * dot(curv.riemann(z, ei, z), ei);
        bracket -= 0.5 * i * curv.re_form(ei, rot(ei));
    }
    bracket * (-PI * dot(z, z) * coth / 2.0).exp()
}

/// `J_{2,u}(0,0)` by direct quadrature of the second Volterra term: Gauss–
/// Legendre in `u_1` and a tensor Gauss–Hermite rule on the plane, orders
/// doubled until successive values agree to 1e-8.
pub fn j2u_volterra(u: f64, curv: &CurvatureScalars) -> Result<f64> {
    check_u(u)?;
    if u > VOLTERRA_MAX_U {
        return Err(BergmanError::InvalidParameter(format!(
            "Volterra quadrature needs u <= {VOLTERRA_MAX_U}, got {u}"
        )));
    }
    let mut prev = outer(u, curv, 8)?;
    let mut n = 16;
    while n <= 1024 {
        let cur = outer(u, curv, n)?;
        if (cur - prev).abs() <= 1e-8 * cur.abs().max(1e-300) || cur == prev {
            return Ok(cur);
        }
        prev = cur;
        n *= 2;
    }
    Err(BergmanError::QuadratureDiverged(format!(
        "outer Volterra integral at u={u} did not settle"
    )))
}

fn outer(u: f64, curv: &CurvatureScalars, n: usize) -> Result<f64> {
    let (nodes, weights) = GaussLegendre::new(n).on_interval(0.0, u);
    let mut terms = Vec::with_capacity(n);
    for (&u1, &w) in nodes.iter().zip(&weights) {
        terms.push(w * inner(u, u1, curv)?);
    }
    Ok(-pairwise_sum(&terms))
}

/// Plane integral at fixed `u_1`, including both heat-kernel prefactors.
fn inner(u: f64, u1: f64, curv: &CurvatureScalars) -> Result<f64> {
    let c = (2.0 * PI * (u - u1)).sinh() * (2.0 * PI * u1).sinh() / (2.0 * PI * u).sinh();
    let pref = 1.0 / ((-4.0 * PI * u1).exp_m1() * (-4.0 * PI * (u - u1)).exp_m1());
    let coth_rest = 1.0 / (2.0 * PI * (u - u1)).tanh();
    // Z = s xi turns the combined Gaussian into exp(-|xi|^2)
    let s = (2.0 * c / PI).sqrt();
    // returns the integral and the integral of its absolute value
    let value = |order: usize| -> (f64, f64) {
        let gh = GaussHermite::new(order);
        let mut terms = Vec::with_capacity(order * order);
        for (&x, &wx) in gh.nodes.iter().zip(&gh.weights) {
            for (&y, &wy) in gh.nodes.iter().zip(&gh.weights) {
                let z = [s * x, s * y];
                let g = (-PI * dot(z, z) * coth_rest / 2.0 + x * x + y * y).exp();
                terms.push(wx * wy * (g * q2_apply_gaussian(u1, curv, z)).re);
            }
        }
        let mag: Vec<f64> = terms.iter().map(|t| t.abs()).collect();
        (s * s * pairwise_sum(&terms), s * s * pairwise_sum(&mag))
    };
    let (a, _) = value(6);
    let (b, scale) = value(12);
    // the bracket cancels heavily for large u, so compare against the magnitude
    if (a - b).abs() > 1e-10 * scale.max(1e-300) {
        return Err(BergmanError::QuadratureDiverged(format!(
            "plane integral at u1={u1}: {a} vs {b}"
        )));
    }
    Ok(pref * b)
}

/// Closed form of `J_{2,u}(0,0)`, written without cancelling large terms:
/// `(1 - e^{-4 pi u})^{-1} { [1/(4 pi) - u / expm1(4 pi u)] r^E
///   + [coth(2 pi u) / (8 pi) - u / (4 sinh^2(2 pi u))] r^X }`.
pub fn j2u_closed(u: f64, curv: &CurvatureScalars) -> Result<f64> {
    check_u(u)?;
    if u < SERIES_CUTOFF {
        return Ok(series_e(u) * curv.re + series_x(u) * curv.rx);
    }
    let pref = 1.0 / -(-4.0 * PI * u).exp_m1();
    let e_part = 1.0 / (4.0 * PI) - u / (4.0 * PI * u).exp_m1();
    let sh = (2.0 * PI * u).sinh();
    let x_part = 1.0 / ((2.0 * PI * u).tanh() * 8.0 * PI) - u / (4.0 * sh * sh);
    Ok(pref * (e_part * curv.re + x_part * curv.rx))
}

/// `j2u_closed(u) - b1`, evaluated without cancellation; with
/// `E = exp(-4 pi u)` it is
/// `E/(1-E) (1/(4 pi) - u/(1-E)) r^E + E ((3-E)/(8 pi (1-E)^2) - u/(1-E)^3) r^X`.
pub fn j2u_closed_deviation(u: f64, curv: &CurvatureScalars) -> Result<f64> {
    check_u(u)?;
    if u < SERIES_CUTOFF {
        return Ok(j2u_closed(u, curv)? - b1(curv));
    }
    let e = (-4.0 * PI * u).exp();
    let om = -(-4.0 * PI * u).exp_m1();
    let de = e / om * (1.0 / (4.0 * PI) - u / om);
    let dx = e * ((3.0 - e) / (8.0 * PI * om * om) - u / (om * om * om));
    Ok(de * curv.re + dx * curv.rx)
}

fn series_e(u: f64) -> f64 {
    let p2 = PI * PI;
    1.0 / (8.0 * PI) + u / 6.0 - 4.0 * p2 * u.powi(3) / 45.0 + 16.0 * p2 * p2 * u.powi(5) / 315.0
}

fn series_x(u: f64) -> f64 {
    let p2 = PI * PI;
    1.0 / (24.0 * PI) + u / 12.0 + PI * u * u / 30.0 - 2.0 * p2 * u.powi(3) / 45.0
        - 2.0 * p2 * PI * u.powi(4) / 63.0
        + 8.0 * p2 * p2 * u.powi(5) / 315.0
        + 16.0 * p2 * p2 * PI * u.powi(6) / 675.0
}

/// `b_1 = (r^E + r^X / 2) / (4 pi)`.
pub fn b1(curv: &CurvatureScalars) -> f64 {
    (curv.re + 0.5 * curv.rx) / (4.0 * PI)
}

/// Least-squares slope of `log y` against `x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Largest `|K_u - P|` over pairs in the disc of the given radius (polar
/// lattice of sample points), for `n = 1`.
pub fn heat_projector_gap(u: f64, spec: &ModelSpectrum, radius: f64) -> Result<f64> {
    if spec.n() != 1 {
        return Err(BergmanError::InvalidParameter("heat_projector_gap needs n = 1".into()));
    }
    let mut pts = vec![[0.0, 0.0]];
    for r in 1..=4 {
        let rr = radius * r as f64 / 4.0;
        for k in 0..8 {
            let t = 2.0 * PI * k as f64 / 8.0;
            pts.push([rr * t.cos(), rr * t.sin()]);
        }
    }
    let mut worst = 0.0f64;
    for z in &pts {
        for zp in &pts {
            let d = model_heat_kernel(z, zp, u, spec)? - model_bergman(z, zp, spec)?;
            worst = worst.max(d.norm());
        }
    }
    Ok(worst)
}
