//! Explicit bases of holomorphic sections of `L^p (x) E`.
//!
//! A section is stored as a holomorphic chart function `f_j` together with a
//! log-domain weight `W_p` such that `|S_j(z)|^2 = |f_j(z)|^2 exp(-W_p(z))`.
//! Kernels consume the *unit-frame* values `f_j(z) exp(-W_p(z) / 2)`, which are
//! assembled term by term in the log domain so nothing over- or underflows at
//! large `p`.

use crate::error::{BergmanError, Result};
use crate::geometry::{Chart, ChartPoint, KaehlerModel, ModelKind};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Largest tail of the truncated theta series tolerated.
pub const THETA_TAIL_TOLERANCE: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub enum SectionFamily {
    /// Monomials `z^j`, `j` in `exponents`, sections of `O(degree)`.
    Monomials { degree: u32, exponents: Vec<u32> },
    /// Theta functions with characteristics `j / p`, `j = 0..p`.
    Theta { tau: Complex64, truncation: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionBasis {
    model: KaehlerModel,
    p: u32,
    family: SectionFamily,
    mixing: Option<DMatrix<Complex64>>,
}

/// Raw chart values `f_j(z)` with the pointwise weight `exp(-W_p(z) / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionValues {
    pub values: Vec<Complex64>,
    pub weight: f64,
}

impl SectionBasis {
    pub fn model(&self) -> &KaehlerModel {
        &self.model
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn family(&self) -> &SectionFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            SectionFamily::Monomials { exponents, .. } => exponents.len(),
            SectionFamily::Theta { .. } => self.p as usize,
        }
    }

    /// Polynomial degree a quadrature rule must resolve.
    pub fn degree(&self) -> usize {
        match &self.family {
            SectionFamily::Monomials { degree, .. } => *degree as usize,
            SectionFamily::Theta { .. } => self.p as usize,
        }
    }

    pub fn mixing(&self) -> Option<&DMatrix<Complex64>> {
        self.mixing.as_ref()
    }

    /// Replaces the sections `S` by `M S` (rows of `M` are the new sections).
    pub fn mixed(&self, m: DMatrix<Complex64>) -> Result<Self> {
        let d = self.dim();
        if m.nrows() != d || m.ncols() != d {
            return Err(BergmanError::InvalidParameter(format!(
                "mixing matrix must be {d}x{d}, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let combined = match &self.mixing {
            Some(prev) => &m * prev,
            None => m,
        };
        Ok(Self {
            mixing: Some(combined),
            ..self.clone()
        })
    }

    /// The weight `W_p` at a chart point.
    pub fn weight_log(&self, pt: impl Into<ChartPoint>) -> Result<f64> {
        let pt = pt.into();
        pt.check_finite()?;
        match &self.family {
            SectionFamily::Monomials { degree, .. } => {
                let t = pt.coord.norm_sqr();
                let pot = self.model.sphere_potential();
                Ok(*degree as f64 * t.ln_1p() + self.p as f64 * pot.phi(t))
            }
            SectionFamily::Theta { tau, .. } => {
                torus_chart(&pt)?;
                let y = pt.coord.im;
                Ok(2.0 * PI * self.p as f64 * y * y / tau.im)
            }
        }
    }

    /// Raw chart functions and `exp(-W_p / 2)`, without mixing.
    pub fn evaluate(&self, pt: impl Into<ChartPoint>) -> Result<SectionValues> {
        let pt = pt.into();
        let w = self.weight_log(pt)?;
        let values = match &self.family {
            SectionFamily::Monomials { degree, exponents } => exponents
                .iter()
                .map(|&j| {
                    let e = match pt.chart {
                        Chart::Affine => j,
                        Chart::Inverted => degree - j,
                    };
                    pt.coord.powu(e)
                })
                .collect(),
            SectionFamily::Theta { tau, truncation } => (0..self.p)
                .map(|j| theta_raw(self.p, j, *tau, *truncation, pt.coord))
                .collect(),
        };
        Ok(SectionValues {
            values,
            weight: (-0.5 * w).exp(),
        })
    }

    /// Unit-frame values `f_j(z) exp(-W_p(z)/2)` with any mixing applied.
    pub fn unit_frame(&self, pt: impl Into<ChartPoint>) -> Result<DVector<Complex64>> {
        let pt = pt.into();
        pt.check_finite()?;
        let raw = match &self.family {
            SectionFamily::Monomials { degree, exponents } => {
                let t = pt.coord.norm_sqr();
                let pot = self.model.sphere_potential();
                let half_w = 0.5 * (*degree as f64 * t.ln_1p() + self.p as f64 * pot.phi(t));
                let log_r = pt.coord.norm().ln();
                let arg = pt.coord.arg();
                DVector::from_iterator(
                    exponents.len(),
                    exponents.iter().map(|&j| {
                        let e = match pt.chart {
                            Chart::Affine => j,
                            Chart::Inverted => degree - j,
                        };
                        if e == 0 {
                            Complex64::new((-half_w).exp(), 0.0)
                        } else if t == 0.0 {
                            Complex64::new(0.0, 0.0)
                        } else {
                            let ef = e as f64;
                            Complex64::from_polar((ef * log_r - half_w).exp(), ef * arg)
                        }
                    }),
                )
            }
            SectionFamily::Theta { tau, truncation } => {
                torus_chart(&pt)?;
                DVector::from_iterator(
                    self.p as usize,
                    (0..self.p).map(|j| theta_unit(self.p, j, *tau, *truncation, pt.coord)),
                )
            }
        };
        Ok(match &self.mixing {
            Some(m) => m * raw,
            None => raw,
        })
    }
}

fn torus_chart(pt: &ChartPoint) -> Result<()> {
    if pt.chart == Chart::Affine {
        Ok(())
    } else {
        Err(BergmanError::OutOfChart(format!("{pt} (torus has one chart)")))
    }
}

pub fn basis_cp1(model: &KaehlerModel, p: u32) -> Result<SectionBasis> {
    if p == 0 {
        return Err(BergmanError::InvalidParameter("p must be at least 1".into()));
    }
    match model.kind() {
        ModelKind::FubiniStudyCP1 | ModelKind::PerturbedCP1 => {
            let degree = p + model.twist();
            Ok(SectionBasis {
                model: *model,
                p,
                family: SectionFamily::Monomials {
                    degree,
                    exponents: (0..=degree).collect(),
                },
                mixing: None,
            })
        }
        _ => Err(BergmanError::WrongModel {
            op: "basis_cp1",
            model: model.to_string(),
        }),
    }
}

/// Smallest truncation radius whose theta tail is below [`THETA_TAIL_TOLERANCE`].
///
/// Terms of the unit-frame series are bounded by
/// `exp(-pi p Im(tau) (m - m_c)^2)` around the centre `m_c = -Im(z)/Im(tau)`,
/// so keeping `|n - n_c| <= T` leaves a two-sided tail of at most
/// `2 sum_{k > T} exp(-pi p Im(tau) (k - 1/2)^2)`.
pub fn theta_truncation_bound(p: u32, tau: Complex64) -> usize {
    (1..200)
        .find(|&t| theta_tail(p, tau, t) <= THETA_TAIL_TOLERANCE)
        .unwrap_or(200)
}

fn theta_tail(p: u32, tau: Complex64, truncation: usize) -> f64 {
    let c = PI * p as f64 * tau.im;
    (truncation + 1..truncation + 60)
        .map(|k| {
            let d = k as f64 - 0.5;
            2.0 * (-c * d * d).exp()
        })
        .sum()
}

/// `p` theta functions with characteristics; `truncation = None` picks the
/// smallest admissible radius.
pub fn basis_torus(model: &KaehlerModel, p: u32, truncation: Option<usize>) -> Result<SectionBasis> {
    if model.kind() != ModelKind::FlatTorus {
        return Err(BergmanError::WrongModel {
            op: "basis_torus",
            model: model.to_string(),
        });
    }
    if p == 0 {
        return Err(BergmanError::InvalidParameter("p must be at least 1".into()));
    }
    let required = theta_truncation_bound(p, model.tau());
    let truncation = match truncation {
        Some(t) if t < required => {
            return Err(BergmanError::TruncationTooSmall { given: t, required })
        }
        Some(t) => t,
        None => required,
    };
    Ok(SectionBasis {
        model: *model,
        p,
        family: SectionFamily::Theta {
            tau: model.tau(),
            truncation,
        },
        mixing: None,
    })
}

/// Invariant monomials `z^j`, `k | j`, on the cyclic quotient. The group acts
/// trivially on the fibre over `z = 0`; it then acts on the fibre over
/// infinity by `exp(2 pi i (p + m) / k)`, which is trivial because `k | p + m`.
pub fn basis_quotient(model: &KaehlerModel, p: u32) -> Result<SectionBasis> {
    if model.kind() != ModelKind::CyclicQuotientCP1 {
        return Err(BergmanError::WrongModel {
            op: "basis_quotient",
            model: model.to_string(),
        });
    }
    if p == 0 {
        return Err(BergmanError::InvalidParameter("p must be at least 1".into()));
    }
    let k = model.quotient_order();
    let m = model.twist();
    let degree = p + m;
    if !degree.is_multiple_of(k) {
        return Err(BergmanError::IncompatiblePower { p, m, k });
    }
    Ok(SectionBasis {
        model: *model,
        p,
        family: SectionFamily::Monomials {
            degree,
            exponents: (0..=degree).step_by(k as usize).collect(),
        },
        mixing: None,
    })
}

/// The natural basis for any compact model.
pub fn basis_for(model: &KaehlerModel, p: u32) -> Result<SectionBasis> {
    match model.kind() {
        ModelKind::FubiniStudyCP1 | ModelKind::PerturbedCP1 => basis_cp1(model, p),
        ModelKind::FlatTorus => basis_torus(model, p, None),
        ModelKind::CyclicQuotientCP1 => basis_quotient(model, p),
        ModelKind::BargmannFock => Err(BergmanError::WrongModel {
            op: "basis_for",
            model: model.to_string(),
        }),
    }
}

pub fn evaluate_sections(basis: &SectionBasis, pt: impl Into<ChartPoint>) -> Result<SectionValues> {
    basis.evaluate(pt)
}

fn theta_window(p: u32, j: u32, tau: Complex64, truncation: usize, z: Complex64) -> (i64, i64) {
    let centre = -z.im / tau.im - j as f64 / p as f64;
    let nc = centre.round() as i64;
    (nc - truncation as i64, nc + truncation as i64)
}

/// `sum_n exp(pi i p tau m^2 + 2 pi i p m z)`, `m = n + j/p`.
fn theta_raw(p: u32, j: u32, tau: Complex64, truncation: usize, z: Complex64) -> Complex64 {
    let pf = p as f64;
    let (lo, hi) = theta_window(p, j, tau, truncation, z);
    let i = Complex64::new(0.0, 1.0);
    (lo..=hi)
        .map(|n| {
            let m = n as f64 + j as f64 / pf;
            (i * PI * pf * tau * m * m + 2.0 * i * PI * pf * m * z).exp()
        })
        .sum()
}

/// Unit-frame theta value, each term carrying its share of `exp(-W_p/2)`.
fn theta_unit(p: u32, j: u32, tau: Complex64, truncation: usize, z: Complex64) -> Complex64 {
    let pf = p as f64;
    // theta_j(z + 1) = theta_j(z) and the weight only sees Im z
    let z = Complex64::new(z.re - z.re.floor(), z.im);
    let (lo, hi) = theta_window(p, j, tau, truncation, z);
    let mut terms: Vec<Complex64> = (lo..=hi)
        .map(|n| {
            let m = n as f64 + j as f64 / pf;
            let s = tau.im * m + z.im;
            let re = -PI * pf / tau.im * s * s;
            let im = PI * pf * (tau.re * m * m + 2.0 * m * z.re);
            Complex64::from_polar(re.exp(), im)
        })
        .collect();
    // add smallest terms first
    terms.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    terms.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn cp1_dimensions() {
        let fs = KaehlerModel::fubini_study(0);
        assert_eq!(basis_cp1(&fs, 3).unwrap().dim(), 4);
        let fs2 = KaehlerModel::fubini_study(2);
        assert_eq!(basis_cp1(&fs2, 3).unwrap().dim(), 6);
    }

    #[test]
    fn cp1_rejects_other_models() {
        let t = KaehlerModel::flat_torus(c(0.0, 1.0)).unwrap();
        assert!(matches!(basis_cp1(&t, 3), Err(BergmanError::WrongModel { .. })));
    }

    #[test]
    fn zero_perturbation_gives_fs_weights() {
        let fs = basis_cp1(&KaehlerModel::fubini_study(0), 5).unwrap();
        let pz = basis_cp1(&KaehlerModel::perturbed(0.0, 0).unwrap(), 5).unwrap();
        for z in [c(0.1, 0.2), c(3.0, -1.0)] {
            assert_eq!(fs.weight_log(z).unwrap(), pz.weight_log(z).unwrap());
        }
    }

    #[test]
    fn monomials_at_origin_and_one() {
        let b = basis_cp1(&KaehlerModel::fubini_study(0), 3).unwrap();
        let v0 = b.evaluate(c(0.0, 0.0)).unwrap();
        assert_eq!(v0.values, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(v0.weight, 1.0);
        let v1 = b.evaluate(c(1.0, 0.0)).unwrap();
        assert!(v1.values.iter().all(|v| *v == c(1.0, 0.0)));
        assert_relative_eq!(v1.weight, 2f64.powf(-1.5), max_relative = 1e-15);
    }

    #[test]
    fn unit_frame_is_finite_at_large_p() {
        let b = basis_cp1(&KaehlerModel::fubini_study(0), 256).unwrap();
        let u = b.unit_frame(c(30.0, 5.0)).unwrap();
        assert!(u.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        assert!(u.iter().any(|v| v.norm() > 1e-3));
    }

    #[test]
    fn chart_switch_consistency() {
        let b = basis_cp1(&KaehlerModel::perturbed(0.2, 1).unwrap(), 7).unwrap();
        let z = ChartPoint::affine(c(0.7, -1.3));
        let w = z.switch().unwrap();
        let uz = b.unit_frame(z).unwrap();
        let uw = b.unit_frame(w).unwrap();
        for (a, b) in uz.iter().zip(uw.iter()) {
            assert!((a.norm_sqr() - b.norm_sqr()).abs() < 1e-13);
        }
    }

    #[test]
    fn torus_dimensions_and_truncation() {
        let t = KaehlerModel::flat_torus(c(0.0, 1.0)).unwrap();
        assert_eq!(basis_torus(&t, 4, None).unwrap().dim(), 4);
        assert_eq!(basis_torus(&t, 1, None).unwrap().dim(), 1);
        assert!(matches!(
            basis_torus(&t, 1, Some(1)),
            Err(BergmanError::TruncationTooSmall { .. })
        ));
    }

    #[test]
    fn classical_theta_constant() {
        // theta(0 | i) = pi^(1/4) / Gamma(3/4)
        let t = KaehlerModel::flat_torus(c(0.0, 1.0)).unwrap();
        let b = basis_torus(&t, 1, None).unwrap();
        let v = b.evaluate(c(0.0, 0.0)).unwrap();
        assert_relative_eq!(v.values[0].re, 1.086_434_811_213_308, max_relative = 1e-14);
        assert!(v.values[0].im.abs() < 1e-15);
    }

    #[test]
    fn theta_quasi_periodicity() {
        let t = KaehlerModel::flat_torus(c(0.2, 1.1)).unwrap();
        let p = 3;
        let b = basis_torus(&t, p, None).unwrap();
        let z = c(0.31, 0.17);
        let v = b.evaluate(z).unwrap();
        let v1 = b.evaluate(z + 1.0).unwrap();
        let vt = b.evaluate(z + t.tau()).unwrap();
        let i = c(0.0, 1.0);
        let factor = (-i * PI * p as f64 * t.tau() - 2.0 * i * PI * p as f64 * z).exp();
        for j in 0..p as usize {
            assert!((v.values[j] - v1.values[j]).norm() < 1e-12 * v.values[j].norm().max(1.0));
            assert!((vt.values[j] - factor * v.values[j]).norm() < 1e-12 * vt.values[j].norm());
        }
    }

    #[test]
    fn quotient_bases() {
        let q2 = KaehlerModel::cyclic_quotient(2, 0).unwrap();
        let b = basis_quotient(&q2, 4).unwrap();
        assert_eq!(
            b.family(),
            &SectionFamily::Monomials {
                degree: 4,
                exponents: vec![0, 2, 4]
            }
        );
        let q3 = KaehlerModel::cyclic_quotient(3, 0).unwrap();
        assert_eq!(basis_quotient(&q3, 6).unwrap().dim(), 3);
        assert!(matches!(
            basis_quotient(&q2, 3),
            Err(BergmanError::IncompatiblePower { .. })
        ));
    }

    #[test]
    fn mixing_checks_shape() {
        let b = basis_cp1(&KaehlerModel::fubini_study(0), 2).unwrap();
        assert!(b.mixed(DMatrix::identity(2, 2)).is_err());
        let m = b.mixed(DMatrix::identity(3, 3) * c(2.0, 0.0)).unwrap();
        let u = m.unit_frame(c(0.0, 0.0)).unwrap();
        assert_eq!(u[0], c(2.0, 0.0));
    }
}
