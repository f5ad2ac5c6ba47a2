//! Expansion coefficients in `1/p`, off-diagonal decay scans, orbifold
//! profiles and the Fubini–Study pullback deviation.

use crate::bergman::{trace, KernelData};
use crate::error::{BergmanError, Result};
use crate::geometry::{
    exp_map, geodesic_distance, omega_density, scalar_curvature, Chart, ChartPoint, KaehlerModel,
    ModelKind,
};
use crate::model::{b1, CurvatureScalars};
use crate::sections::basis_for;
use nalgebra::{DMatrix, DVector, SVD};
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

/// Fits with a larger scaled condition number are flagged.
pub const ILL_CONDITIONED: f64 = 1e10;
/// Default number of correction terms fitted after `b_0`.
pub const DEFAULT_FIT_DEGREE: usize = 3;
/// Default powers for diagonal fits.
pub const DEFAULT_P_RANGE: [u32; 9] = [8, 12, 16, 24, 32, 48, 64, 96, 128];
/// The torus skips small `p`, where lattice images of the kernel are visible.
pub const TORUS_P_RANGE: [u32; 5] = [16, 24, 32, 48, 64];
/// Parity probes pass when the half-power coefficient is below this many
/// noise floors.
pub const PARITY_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Serialize)]
pub struct ParityProbe {
    /// Fitted coefficient of `p^{n - 1/2}`.
    pub coefficient: f64,
    pub noise_floor: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionFit {
    pub point: Option<String>,
    pub ps: Vec<u32>,
    pub n: u32,
    /// `b_0, ..., b_k`.
    pub coefficients: Vec<f64>,
    /// RMS residual of `B_p / p^n`.
    pub residual: f64,
    /// Condition number of the column-equilibrated design matrix.
    pub condition: f64,
    pub ill_conditioned: bool,
    pub parity: Option<ParityProbe>,
}

impl ExpansionFit {
    pub fn coefficient(&self, r: usize) -> f64 {
        self.coefficients.get(r).copied().unwrap_or(0.0)
    }
}

struct Lsq {
    coef: Vec<f64>,
    rss: f64,
    condition: f64,
    stderr: Vec<f64>,
}

/// Least squares `y ~ sum_c coef_c x^{powers_c}` by SVD after scaling each
/// column to unit norm.
fn lsq(x: &[f64], y: &[f64], powers: &[f64]) -> Lsq {
    let m = x.len();
    let k = powers.len();
    let mut a = DMatrix::<f64>::from_fn(m, k, |i, j| x[i].powf(powers[j]));
    let scale: Vec<f64> = (0..k).map(|j| a.column(j).norm()).collect();
    for (j, s) in scale.iter().enumerate() {
        a.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = SVD::new(a.clone(), true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let rhs = DVector::from_column_slice(y);
    let sol = svd
        .solve(&rhs, 0.0)
        .expect("SVD was computed with both factors");
    let resid = &a * &sol - &rhs;
    let rss = resid.norm_squared();
    let dof = m.saturating_sub(k);
    let sigma2 = if dof > 0 { rss / dof as f64 } else { 0.0 };
    let vt = svd.v_t.as_ref().expect("right factor requested");
    let stderr = (0..k)
        .map(|j| {
            let var: f64 = (0..k).map(|i| (vt[(i, j)] / sv[i]).powi(2)).sum();
            (sigma2 * var).sqrt() / scale[j]
        })
        .collect();
    Lsq {
        coef: sol.iter().zip(&scale).map(|(c, s)| c / s).collect(),
        rss,
        condition: smax / smin,
        stderr,
    }
}

/// Fits `B_p = sum_{r <= k} b_r p^{n - r}` by least squares in `1/p`.
///
/// When at least `k + 3` distinct powers are given, a second fit with an
/// extra `p^{n - 1/2}` column probes for half-integer powers; its noise floor
/// is the larger of the coefficient's standard error, the rounding floor and
/// the change of the coefficient when one more integer power is fitted.
pub fn fit_expansion(samples: &[(u32, f64)], n: u32, k: usize) -> Result<ExpansionFit> {
    let mut ps: Vec<u32> = samples.iter().map(|s| s.0).collect();
    ps.sort_unstable();
    ps.dedup();
    if ps.len() < k + 2 || ps.len() != samples.len() || ps[0] == 0 {
        return Err(BergmanError::InsufficientSamples {
            needed: k + 2,
            got: ps.len(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by_key(|s| s.0);
    let x: Vec<f64> = sorted.iter().map(|s| 1.0 / s.0 as f64).collect();
    let y: Vec<f64> = sorted
        .iter()
        .map(|s| s.1 / (s.0 as f64).powi(n as i32))
        .collect();
    let powers: Vec<f64> = (0..=k).map(|r| r as f64).collect();
    let main = lsq(&x, &y, &powers);
    let parity = (ps.len() >= k + 3).then(|| {
        let probe_powers = |deg: usize| {
            let mut v = vec![0.0, 0.5];
            v.extend((1..=deg).map(|r| r as f64));
            v
        };
        let pk = lsq(&x, &y, &probe_powers(k));
        let ymax = y.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut noise = pk.stderr[1].max(64.0 * f64::EPSILON * pk.condition * ymax);
        if ps.len() >= k + 4 {
            let pk1 = lsq(&x, &y, &probe_powers(k + 1));
            noise = noise.max((pk.coef[1] - pk1.coef[1]).abs());
        }
        ParityProbe {
            coefficient: pk.coef[1],
            noise_floor: noise,
            passes: pk.coef[1].abs() <= PARITY_FACTOR * noise,
        }
    });
    Ok(ExpansionFit {
        point: None,
        ps,
        n,
        coefficients: main.coef,
        residual: (main.rss / x.len() as f64).sqrt(),
        condition: main.condition,
        ill_conditioned: main.condition > ILL_CONDITIONED,
        parity,
    })
}

/// Comparison of a fitted `b_1` with the curvature formula.
#[derive(Debug, Clone, Serialize)]
pub struct B1Report {
    pub point: String,
    pub fit: ExpansionFit,
    pub measured: f64,
    pub target: f64,
    /// Relative error, or absolute error when the target vanishes.
    pub error: f64,
}

/// Curvature scalars at a point, as consumed by the model formulas.
pub fn curvature_at(model: &KaehlerModel, x: ChartPoint) -> Result<CurvatureScalars> {
    let c = scalar_curvature(model, x)?;
    Ok(CurvatureScalars::new(c.rx, c.re))
}

/// Diagonal values `B_p(x)` for every `p` and point; one Gram per `p`.
pub fn diagonal_table(model: &KaehlerModel, points: &[ChartPoint], ps: &[u32]) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(ps.len());
    for &p in ps {
        let kd = KernelData::new(basis_for(model, p)?)?;
        rows.push(
            points
                .iter()
                .map(|&x| kd.diagonal(x))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(rows)
}

/// Fits `b_1` at each point and compares with `(r^E + r^X/2) / 4 pi`.
pub fn check_b1_points(
    model: &KaehlerModel,
    points: &[ChartPoint],
    ps: &[u32],
    k: usize,
) -> Result<Vec<B1Report>> {
    if model.kind() == ModelKind::BargmannFock {
        return Err(BergmanError::WrongModel {
            op: "check_b1",
            model: model.to_string(),
        });
    }
    let table = diagonal_table(model, points, ps)?;
    points
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let samples: Vec<(u32, f64)> = ps.iter().zip(&table).map(|(&p, row)| (p, row[i])).collect();
            let mut fit = fit_expansion(&samples, 1, k)?;
            fit.point = Some(x.to_string());
            let target = b1(&curvature_at(model, x)?);
            let measured = fit.coefficient(1);
            let error = if target == 0.0 {
                measured.abs()
            } else {
                ((measured - target) / target).abs()
            };
            Ok(B1Report {
                point: x.to_string(),
                fit,
                measured,
                target,
                error,
            })
        })
        .collect()
}

pub fn check_b1(model: &KaehlerModel, x: ChartPoint, ps: &[u32]) -> Result<B1Report> {
    Ok(check_b1_points(model, &[x], ps, DEFAULT_FIT_DEGREE)?.remove(0))
}

/// Off-diagonal magnitudes along a geodesic ray.
#[derive(Debug, Clone, Serialize)]
pub struct DecayScan {
    pub point: String,
    pub direction: f64,
    pub p: u32,
    pub distances: Vec<f64>,
    /// `log |P_p(x, y) / p^n|`.
    pub log_magnitudes: Vec<f64>,
    /// `d^2` coefficient of a quartic fit in the near zone `d <= 3 / sqrt(p)`.
    pub near_exponent: f64,
    pub near_target: f64,
    /// `c` in `log|P_p| <= log C + n log p - c sqrt(p) d` on the far zone.
    pub agmon_exponent: Option<f64>,
    /// Magnitudes below this are treated as numerical noise.
    pub floor: f64,
    pub far_samples: usize,
    pub monotone: bool,
}

/// Scans `|P_p(x, exp_x(d v))|` for the given distances.
pub fn offdiag_decay_scan(
    model: &KaehlerModel,
    x: ChartPoint,
    p: u32,
    distances: &[f64],
) -> Result<DecayScan> {
    let kd = KernelData::new(basis_for(model, p)?)?;
    decay_scan_with(&kd, x, 0.0, distances)
}

pub fn decay_scan_with(kd: &KernelData, x: ChartPoint, direction: f64, distances: &[f64]) -> Result<DecayScan> {
    let model = *kd.basis.model();
    let p = kd.basis.p();
    let pf = p as f64;
    let bx = kd.diagonal(x)?;
    let dim = kd.basis.dim() as f64;
    let tr = trace(&kd.basis, &kd.fact, &kd.grid)?;
    let noise = ((tr - dim) / dim).abs().max(f64::EPSILON) * bx;
    let floor = (1e-13 * bx).max(1e3 * noise);
    let mut logs = Vec::with_capacity(distances.len());
    let mut mags = Vec::with_capacity(distances.len());
    for &d in distances {
        let y = exp_map(&model, x, direction, d)?;
        let v = kd.offdiag(x, y)?.norm();
        mags.push(v);
        logs.push((v / pf).ln());
    }
    let near_cut = 3.0 / pf.sqrt();
    let near: Vec<usize> = (0..distances.len()).filter(|&i| distances[i] <= near_cut).collect();
    if near.len() < 4 {
        return Err(BergmanError::InsufficientSamples {
            needed: 4,
            got: near.len(),
        });
    }
    let d2: Vec<f64> = near.iter().map(|&i| distances[i].powi(2)).collect();
    let ly: Vec<f64> = near.iter().map(|&i| logs[i]).collect();
    let quartic = lsq(&d2, &ly, &[0.0, 1.0, 2.0]);
    let far: Vec<usize> = (0..distances.len())
        .filter(|&i| distances[i] > near_cut)
        .collect();
    let far_ok: Vec<usize> = far.iter().copied().filter(|&i| mags[i] > floor).collect();
    if !far.is_empty() && far_ok.is_empty() {
        return Err(BergmanError::BelowFloor { floor });
    }
    let agmon_exponent = (far_ok.len() >= 2).then(|| {
        let s: Vec<f64> = far_ok.iter().map(|&i| pf.sqrt() * distances[i]).collect();
        let l: Vec<f64> = far_ok.iter().map(|&i| logs[i]).collect();
        -lsq(&s, &l, &[0.0, 1.0]).coef[1]
    });
    let mut order: Vec<usize> = (0..distances.len()).filter(|&i| mags[i] > floor).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));
    let monotone = order.windows(2).all(|w| {
        distances[w[0]] == distances[w[1]] || logs[w[1]] < logs[w[0]]
    });
    Ok(DecayScan {
        point: x.to_string(),
        direction,
        p,
        distances: distances.to_vec(),
        log_magnitudes: logs,
        near_exponent: quartic.coef[1],
        near_target: -PI * pf / 2.0,
        agmon_exponent,
        floor,
        far_samples: far_ok.len(),
        monotone,
    })
}

/// Evenly spaced distances from 0 to `max` inclusive.
pub fn distance_grid(max: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| max * i as f64 / (count - 1) as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointRow {
    pub p: u32,
    /// `B_p^orb(0) / p`.
    pub ratio: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeRow {
    pub p: u32,
    /// Distance to the fixed point.
    pub d: f64,
    pub pd2: f64,
    /// `B_p^orb / B~_p - 1`, the image-point contribution.
    pub correction: f64,
    /// `sum_{g != 1} exp(-(pi/2) p d(x, g x)^2)`.
    pub envelope: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrbifoldProfile {
    pub k: u32,
    pub fixed: Vec<FixedPointRow>,
    /// Largest `deviation(4p) / deviation(p)` over pairs in the p-range.
    pub deviation_ratio: Option<f64>,
    pub envelope: Vec<EnvelopeRow>,
    /// Slope of `log|correction|` against `p d^2`.
    pub slope: f64,
    /// `-(pi/2) |g - 1|^2` for the nearest nontrivial rotation.
    pub slope_target: f64,
    pub r_squared: f64,
    pub within_envelope: bool,
    /// `int (B^orb - B~) dv` over the quotient; exactly `(k - 1) / k`.
    pub correction_mass: Vec<(u32, f64)>,
    /// Fit of the diagonal on the equator.
    pub equator_fit: Option<ExpansionFit>,
}

/// Fixed-point ratios, the off-fixed-point correction profile and the
/// equator fit on a cyclic quotient.
pub fn orbifold_profile(model: &KaehlerModel, ps: &[u32]) -> Result<OrbifoldProfile> {
    if model.kind() != ModelKind::CyclicQuotientCP1 {
        return Err(BergmanError::WrongModel {
            op: "orbifold_profile",
            model: model.to_string(),
        });
    }
    let k = model.quotient_order();
    let origin = ChartPoint::affine(Complex64::new(0.0, 0.0));
    let equator = ChartPoint::affine(Complex64::new(1.0, 0.0));
    let cover = KaehlerModel::fubini_study(model.twist());
    let mut fixed = Vec::new();
    let mut envelope = Vec::new();
    let mut mass = Vec::new();
    let mut equator_samples = Vec::new();
    for &p in ps {
        let down = KernelData::new(basis_for(model, p)?)?;
        let up = down.covering()?;
        let pf = p as f64;
        let ratio = down.diagonal(origin)? / pf;
        fixed.push(FixedPointRow {
            p,
            ratio,
            deviation: (ratio - k as f64).abs(),
        });
        let excess = down.grid.integrate(|x| {
            down.diagonal(x).unwrap_or(f64::NAN) - up.diagonal(x).unwrap_or(f64::NAN)
        });
        mass.push((p, excess));
        equator_samples.push((p, down.diagonal(equator)?));
        for d in envelope_distances(p) {
            let x = exp_map(&cover, origin, 0.0, d)?;
            let correction = down.diagonal(x)? / up.diagonal(x)? - 1.0;
            let env: f64 = (1..k)
                .map(|l| {
                    let gx = crate::bergman::rotate(x, l, k);
                    let dg = geodesic_distance(&cover, x, gx).unwrap_or(0.0);
                    (-PI / 2.0 * pf * dg * dg).exp()
                })
                .sum();
            envelope.push(EnvelopeRow {
                p,
                d,
                pd2: pf * d * d,
                correction,
                envelope: env,
            });
        }
    }
    let mut deviation_ratio: Option<f64> = None;
    for a in &fixed {
        if let Some(b) = fixed.iter().find(|b| b.p == 4 * a.p) {
            let r = b.deviation / a.deviation;
            deviation_ratio = Some(deviation_ratio.map_or(r, |v| v.max(r)));
        }
    }
    let usable: Vec<&EnvelopeRow> = envelope.iter().filter(|r| r.correction != 0.0).collect();
    let xs: Vec<f64> = usable.iter().map(|r| r.pd2).collect();
    let ys: Vec<f64> = usable.iter().map(|r| r.correction.abs().ln()).collect();
    let (slope, r_squared) = if xs.len() >= 3 {
        linear_fit(&xs, &ys)
    } else {
        (f64::NAN, f64::NAN)
    };
    let within_envelope = envelope
        .iter()
        .all(|r| r.correction.abs() <= r.envelope * (1.0 + 1e-9) + 1e-12);
    let sin = (PI / k as f64).sin();
    let equator_fit = if equator_samples.len() >= 3 {
        let deg = (equator_samples.len() - 2).min(DEFAULT_FIT_DEGREE);
        let mut f = fit_expansion(&equator_samples, 1, deg)?;
        f.point = Some(equator.to_string());
        Some(f)
    } else {
        None
    };
    Ok(OrbifoldProfile {
        k,
        fixed,
        deviation_ratio,
        envelope,
        slope,
        slope_target: -PI / 2.0 * 4.0 * sin * sin,
        r_squared,
        within_envelope,
        correction_mass: mass,
        equator_fit,
    })
}

/// Distances with `p d^2` spread over `[0.5, 4]`, kept inside `d <= 0.3`.
fn envelope_distances(p: u32) -> Vec<f64> {
    (1..=8)
        .map(|i| (0.5 * i as f64 / p as f64).sqrt())
        .filter(|&d| d <= 0.3)
        .collect()
}

/// Slope and `R^2` of an ordinary least-squares line.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

#[derive(Debug, Clone, Serialize)]
pub struct PullbackReport {
    pub p: u32,
    pub step: f64,
    pub points: Vec<String>,
    /// `(1/p) phi_p^* omega_FS - omega`, as a multiple of `omega`.
    pub deviations: Vec<f64>,
    pub sup: f64,
}

/// Default step of the finite-difference Laplacian.
pub const PULLBACK_STEP: f64 = 1e-2;

/// Sample points with `|coord| <= 1` in each chart (one chart on the torus).
pub fn pullback_points(model: &KaehlerModel) -> Vec<ChartPoint> {
    let mut pts = Vec::new();
    if model.kind() == ModelKind::FlatTorus {
        let tau = model.tau();
        for i in 0..4 {
            for j in 0..4 {
                let z = Complex64::new(i as f64 / 4.0, 0.0) + tau * (j as f64 / 4.0);
                pts.push(ChartPoint::affine(z));
            }
        }
        return pts;
    }
    for chart in [Chart::Affine, Chart::Inverted] {
        for r in [0.0, 0.35, 0.7, 1.0] {
            let angles = if r == 0.0 { 1 } else { 5 };
            for a in 0..angles {
                let c = Complex64::from_polar(r, 2.0 * PI * a as f64 / angles as f64 + 0.3);
                pts.push(ChartPoint { chart, coord: c });
            }
        }
    }
    pts
}

/// `Delta log B_p / (4 pi p h)` at default points with the default step.
pub fn fubini_study_pullback(model: &KaehlerModel, p: u32) -> Result<PullbackReport> {
    let kd = KernelData::new(basis_for(model, p)?)?;
    pullback_with(&kd, &pullback_points(model), PULLBACK_STEP)
}

/// Pullback deviation with a fourth-order five-point Laplacian in each
/// coordinate. Fails with `GridTooCoarse` when the step is too large for the
/// kernel scale `1/sqrt(p)` or when halving the step moves the result by
/// more than 10%.
pub fn pullback_with(kd: &KernelData, points: &[ChartPoint], step: f64) -> Result<PullbackReport> {
    let p = kd.basis.p();
    if !(step > 0.0) || step * (p as f64).sqrt() > 0.5 {
        return Err(BergmanError::GridTooCoarse(format!(
            "finite-difference step {step} does not resolve the 1/sqrt(p) scale at p={p}"
        )));
    }
    let model = *kd.basis.model();
    let mut devs = Vec::with_capacity(points.len());
    for &x in points {
        let fine = laplacian_log_b(kd, x, step)?;
        let coarse = laplacian_log_b(kd, x, 2.0 * step)?;
        let h = omega_density(&model, x)?;
        let scale = 4.0 * PI * p as f64 * h;
        let dev = fine / scale;
        let gap = (coarse - fine).abs() / scale;
        if gap > 0.1 * dev.abs() + 1e-9 {
            return Err(BergmanError::GridTooCoarse(format!(
                "Laplacian at {x} changes by {gap:.2e} when the step doubles"
            )));
        }
        devs.push(dev);
    }
    let sup = devs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    Ok(PullbackReport {
        p,
        step,
        points: points.iter().map(|x| x.to_string()).collect(),
        deviations: devs,
        sup,
    })
}

fn laplacian_log_b(kd: &KernelData, x: ChartPoint, h: f64) -> Result<f64> {
    let f = |dz: Complex64| -> Result<f64> {
        Ok(kd
            .diagonal(ChartPoint {
                chart: x.chart,
                coord: x.coord + dz,
            })?
            .ln())
    };
    let c = f(Complex64::new(0.0, 0.0))?;
    let mut lap = 0.0;
    for dir in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
        let m2 = f(-2.0 * h * dir)?;
        let m1 = f(-h * dir)?;
        let p1 = f(h * dir)?;
        let p2 = f(2.0 * h * dir)?;
        lap += (-m2 + 16.0 * m1 - 30.0 * c + 16.0 * p1 - p2) / (12.0 * h * h);
    }
    Ok(lap)
}
